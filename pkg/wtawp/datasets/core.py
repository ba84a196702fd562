"""
Graph data model

Description:
    The ``core`` module provides the attributed graph object, the symmetric
    adjacency normalization used by the GCN-style models and the random
    train/validation/test splits.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

A ``Graph`` holds a sparse symmetric 0/1 adjacency matrix ``A`` (no self-loops
stored), a dense feature matrix ``X`` and one integer label per node.

>>> from wtawp.datasets import core
>>> adj = core.normalize_adjacency(graph)
>>> split = core.make_split(graph, seed=0)

All functions are pure given their inputs and an explicit seed.

"""
import json
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

# split fractions
TRAIN_FRACTION = 0.1
VAL_FRACTION = 0.1


# ------------------------------ UTILS ------------------------------
def edges_to_adjacency(n_nodes, edges):
    """Build a symmetric 0/1 CSR adjacency from an undirected edge list

    Duplicates and both orientations collapse into one undirected edge.
    Self-loops are dropped.

    :param n_nodes: number of nodes
    :type n_nodes: int
    :param edges: sequence of ``(i, j)`` pairs
    :type edges: list | :class:`numpy.ndarray`
    :return: adjacency matrix
    :rtype: :class:`scipy.sparse.csr_matrix`
    """
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    arr = arr[arr[:, 0] != arr[:, 1]]
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    data = np.ones(len(rows), dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes))
    # collapse duplicates to 1
    adj.sum_duplicates()
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


# ------------------------------ OBJECTS ------------------------------
class Graph:
    """
    The attributed graph object.

    Attributes:

    - ``adjacency`` (:class:`scipy.sparse.csr_matrix`): symmetric 0/1 matrix, zero diagonal.
    - ``features`` (:class:`numpy.ndarray`): dense ``n_nodes x n_features`` float matrix.
    - ``labels`` (:class:`numpy.ndarray`): integer class per node in ``[0, n_classes)``.
    - ``name`` (str): dataset name.

    """

    def __init__(self, adjacency, features, labels, name="MyGraph"):
        """Initialize the ``Graph`` object.

        :param adjacency: square adjacency matrix (any scipy sparse format or dense)
        :type adjacency: :class:`scipy.sparse.spmatrix` | :class:`numpy.ndarray`
        :param features: node features
        :type features: :class:`numpy.ndarray`
        :param labels: node labels
        :type labels: :class:`numpy.ndarray`
        :param name: dataset name
        :type name: str
        """
        self.name = name
        self.adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
        self.adjacency.sort_indices()
        self.features = np.ascontiguousarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)

    def __str__(self):
        return "[{}] nodes: {} edges: {} features: {} classes: {}".format(
            self.name, self.n_nodes, self.n_edges, self.n_features, self.n_classes
        )

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        if len(self.labels) == 0:
            return 0
        return int(self.labels.max()) + 1

    @property
    def n_edges(self):
        """Number of undirected edges"""
        return int(sp.triu(self.adjacency, k=1).nnz)

    def edges(self):
        """Get the undirected edge list with ``i < j``, sorted

        :return: ``n_edges x 2`` array
        :rtype: :class:`numpy.ndarray`
        """
        upper = sp.triu(self.adjacency, k=1).tocoo()
        arr = np.stack([upper.row, upper.col], axis=1).astype(np.int64)
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        return arr[order]

    def validate(self):
        """Check the graph invariants. Raises ``ValueError`` on failure.

        :return: None
        :rtype: None
        """
        n = self.n_nodes
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency must be square, got {}".format(self.adjacency.shape))
        if (abs(self.adjacency - self.adjacency.T) > 0).nnz > 0:
            raise ValueError("adjacency is not symmetric")
        if np.any(self.adjacency.diagonal() != 0):
            raise ValueError("adjacency has self-loops")
        if self.features.shape[0] != n:
            raise ValueError(
                "features have {} rows for {} nodes".format(self.features.shape[0], n)
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features have non-finite entries")
        if self.labels.shape != (n,):
            raise ValueError("expected {} labels, got {}".format(n, self.labels.shape))
        if n > 0:
            if self.labels.min() < 0:
                raise ValueError("negative label found")
            counts = np.bincount(self.labels, minlength=self.n_classes)
            if np.any(counts == 0):
                missing = np.flatnonzero(counts == 0).tolist()
                raise ValueError("classes {} have no nodes".format(missing))
        return None

    def with_adjacency(self, adjacency, name=None):
        """Get a copy of the graph with another adjacency matrix

        :param adjacency: new adjacency
        :type adjacency: :class:`scipy.sparse.spmatrix`
        :param name: new name. If None, keeps the current name
        :type name: str
        :return: new graph sharing features and labels
        :rtype: :class:`Graph`
        """
        if name is None:
            name = self.name
        return Graph(adjacency=adjacency, features=self.features, labels=self.labels, name=name)

    def subgraph(self, node_ids, name=None):
        """Get the induced subgraph over ``node_ids`` (in the given order)

        :param node_ids: nodes to keep
        :type node_ids: :class:`numpy.ndarray`
        :param name: new name. If None, keeps the current name
        :type name: str
        :return: induced subgraph
        :rtype: :class:`Graph`
        """
        if name is None:
            name = self.name
        node_ids = np.asarray(node_ids, dtype=np.int64)
        adj = self.adjacency[node_ids][:, node_ids]
        return Graph(
            adjacency=adj,
            features=self.features[node_ids],
            labels=self.labels[node_ids],
            name=name,
        )

    def to_dict(self):
        """Get the JSON-ready dictionary ``{n_nodes, edges, features, labels}``

        :return: graph document
        :rtype: dict
        """
        return {
            "name": self.name,
            "n_nodes": int(self.n_nodes),
            "edges": self.edges().tolist(),
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
        }

    def to_json(self, file_path):
        """Export the graph to a JSON document

        :param file_path: output file
        :type file_path: str
        :return: file path
        :rtype: str
        """
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        return file_path

    @classmethod
    def from_dict(cls, dct):
        """Build a graph from a JSON-ready dictionary

        :param dct: graph document with ``n_nodes``, ``edges``, ``features`` and ``labels``
        :type dct: dict
        :return: graph
        :rtype: :class:`Graph`
        """
        n = int(dct["n_nodes"])
        adj = edges_to_adjacency(n_nodes=n, edges=dct["edges"])
        features = np.asarray(dct["features"], dtype=np.float64).reshape(n, -1)
        return cls(
            adjacency=adj,
            features=features,
            labels=dct["labels"],
            name=dct.get("name", "MyGraph"),
        )

    @classmethod
    def from_json(cls, file_path):
        return load_graph_json(file_path)


def load_graph_json(file_path):
    """Load a graph from a JSON document written by :meth:`Graph.to_json`

    :param file_path: path to file
    :type file_path: str
    :return: graph
    :rtype: :class:`Graph`
    """
    with open(file_path, "r", encoding="utf-8") as f:
        dct = json.load(f)
    graph = Graph.from_dict(dct)
    graph.validate()
    return graph


class NormalizedAdjacency:
    """
    The normalized adjacency ``D^-1/2 (A + I) D^-1/2`` in CSR form.

    ``matrix`` is used in the forward pass and ``transposed`` in the backward
    pass. They coincide for a clean graph; they differ once the stored values
    are perturbed individually (smoothness diagnostic).

    """

    def __init__(self, matrix):
        self.matrix = sp.csr_matrix(matrix, dtype=np.float64)
        self.matrix.sort_indices()
        self.transposed = self.matrix.T.tocsr()
        self.transposed.sort_indices()
        # stored entries as (row, col) for gradients w.r.t. values
        coo = self.matrix.tocoo()
        self.rows = coo.row.astype(np.int64)
        self.cols = coo.col.astype(np.int64)

    @property
    def n_nodes(self):
        return self.matrix.shape[0]

    def dot(self, dense):
        """``A_hat @ dense``"""
        return self.matrix @ dense

    def tdot(self, dense):
        """``A_hat.T @ dense``"""
        return self.transposed @ dense

    def with_values(self, values):
        """Get a copy with the stored values replaced (same sparsity pattern)

        :param values: new values, ordered as ``matrix.data``
        :type values: :class:`numpy.ndarray`
        :return: new normalized adjacency
        :rtype: :class:`NormalizedAdjacency`
        """
        m = self.matrix.copy()
        m.data = np.asarray(values, dtype=np.float64).copy()
        return NormalizedAdjacency(m)


def normalize_adjacency(graph):
    """Compute the symmetric normalization ``D^-1/2 (A + I) D^-1/2``

    Isolated nodes get ``D_ii = 1`` from the self-loop. Each entry is the
    product ``dinv[i] * dinv[j]`` so the result is exactly symmetric.

    :param graph: input graph (or a square sparse adjacency matrix)
    :type graph: :class:`Graph` | :class:`scipy.sparse.spmatrix`
    :return: normalized adjacency
    :rtype: :class:`NormalizedAdjacency`
    """
    adj = graph.adjacency if isinstance(graph, Graph) else sp.csr_matrix(graph)
    n = adj.shape[0]
    a_tilde = (adj + sp.identity(n, format="csr", dtype=np.float64)).tocsr()
    a_tilde.sum_duplicates()
    degree = np.asarray(a_tilde.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(degree)
    coo = a_tilde.tocoo()
    values = coo.data * (dinv[coo.row] * dinv[coo.col])
    matrix = sp.csr_matrix((values, (coo.row, coo.col)), shape=(n, n))
    return NormalizedAdjacency(matrix)


def largest_connected_component(graph):
    """Restrict the graph to its largest connected component

    Ties between equally large components go to the one holding the lowest
    node id. Node order is preserved.

    :param graph: input graph
    :type graph: :class:`Graph`
    :return: induced subgraph and the retained original node ids
    :rtype: tuple
    """
    if graph.n_nodes == 0:
        raise ValueError("empty graph has no connected component")
    n_comp, comp = connected_components(graph.adjacency, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    # argmax picks the first maximum; components are numbered by first node
    best = int(np.argmax(sizes))
    node_ids = np.flatnonzero(comp == best)
    return graph.subgraph(node_ids), node_ids


class Split:
    """
    The train/validation/test node split.

    Attributes:

    - ``train_ids``, ``val_ids``, ``test_ids`` (:class:`numpy.ndarray`): disjoint, sorted node ids.
    - ``seed`` (int): seed the split was drawn with.

    """

    def __init__(self, train_ids, val_ids, test_ids, seed=0):
        self.train_ids = np.sort(np.asarray(train_ids, dtype=np.int64))
        self.val_ids = np.sort(np.asarray(val_ids, dtype=np.int64))
        self.test_ids = np.sort(np.asarray(test_ids, dtype=np.int64))
        self.seed = int(seed)

    def __str__(self):
        return "[Split seed={}] train: {} val: {} test: {}".format(
            self.seed, len(self.train_ids), len(self.val_ids), len(self.test_ids)
        )

    def all_ids(self):
        """Get all node ids covered by the split, sorted"""
        return np.sort(np.concatenate([self.train_ids, self.val_ids, self.test_ids]))

    def to_dict(self):
        return {
            "seed": self.seed,
            "train_ids": self.train_ids.tolist(),
            "val_ids": self.val_ids.tolist(),
            "test_ids": self.test_ids.tolist(),
        }

    @classmethod
    def from_dict(cls, dct):
        return cls(
            train_ids=dct["train_ids"],
            val_ids=dct["val_ids"],
            test_ids=dct["test_ids"],
            seed=dct.get("seed", 0),
        )

    def to_json(self, file_path):
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        return file_path

    @classmethod
    def from_json(cls, file_path):
        with open(file_path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def split_sizes(n_nodes):
    """Get the (train, val, test) sizes with half-up rounding of 10% / 10%

    :param n_nodes: number of nodes
    :type n_nodes: int
    :return: sizes
    :rtype: tuple
    """
    n_train = int(np.floor(TRAIN_FRACTION * n_nodes + 0.5))
    n_val = int(np.floor(VAL_FRACTION * n_nodes + 0.5))
    return n_train, n_val, n_nodes - n_train - n_val


def make_split(graph, seed):
    """Draw a uniform random (non-stratified) 10/10/80 split

    :param graph: graph (or its number of nodes)
    :type graph: :class:`Graph` | int
    :param seed: split seed
    :type seed: int
    :return: split
    :rtype: :class:`Split`
    """
    n = graph.n_nodes if isinstance(graph, Graph) else int(graph)
    if n < 1:
        raise ValueError("cannot split an empty graph")
    n_train, n_val, _ = split_sizes(n)
    if n_train == 0 or n_val == 0:
        raise ValueError("{} nodes give an empty train or validation set (need at least 5)".format(n))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return Split(
        train_ids=perm[:n_train],
        val_ids=perm[n_train:n_train + n_val],
        test_ids=perm[n_train + n_val:],
        seed=seed,
    )
