"""
Citation dataset parser

Description:
    The ``planetoid`` module reads the public raw citation format of Cora and
    Citeseer (tab-separated ``.content`` and ``.cites`` files).

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

The content file has one node per line::

    <id> <f_1> ... <f_F> <label>

and the cites file one edge per line::

    <id_a> <id_b>

Edges referencing unknown ids are dropped, the graph is made undirected and
restricted to its largest connected component, feature rows are scaled to sum
1 and labels are remapped to ``[0, K)``.

Example
-------

.. code-block:: python

    from wtawp.parsers import planetoid

    graph = planetoid.load_citation_dataset("cora/cora.content", "cora/cora.cites")
    print(graph)  # 2485 nodes, 1433 features, 7 classes

"""
import os
import numpy as np

from wtawp.root import ParseError
from wtawp.datasets.core import Graph, edges_to_adjacency, largest_connected_component


def row_normalize(features):
    """Scale every row to sum 1, all-zero rows stay zero

    :param features: dense matrix
    :type features: :class:`numpy.ndarray`
    :return: normalized copy
    :rtype: :class:`numpy.ndarray`
    """
    features = np.asarray(features, dtype=np.float64)
    sums = features.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0, 1.0, sums)
    return features / safe


class CitationParser:
    """
    The raw citation dataset parser.

    """

    def __init__(self, name="MyCitationDataset"):
        self.name = name
        # reading
        self.reading_encoding = "utf-8"

        # data
        self.node_ids = None
        self.features = None
        self.label_names = None
        self.labels = None
        self.edges = None
        self.n_dropped_edges = 0

    def get_metadata(self):
        dict_meta = {
            "Name": self.name,
            "Nodes": None if self.node_ids is None else len(self.node_ids),
            "Edges": None if self.edges is None else len(self.edges),
            "Dropped_Edges": self.n_dropped_edges,
            "Classes": None if self.label_names is None else len(self.label_names),
        }
        return dict_meta

    def _split(self, line):
        # the public files mix tabs and spaces
        return line.strip().split()

    def read_content(self, content_path):
        """Read the node table

        :param content_path: path to the ``.content`` file
        :type content_path: str
        :return: None
        :rtype: None
        """
        node_ids = []
        seen = set()
        rows = []
        raw_labels = []
        n_features = None
        with open(content_path, "r", encoding=self.reading_encoding) as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                tokens = self._split(line)
                if len(tokens) < 3:
                    raise ParseError(
                        content_path, line_number, "expected 'id f_1 ... f_F label'"
                    )
                if n_features is None:
                    n_features = len(tokens) - 2
                elif len(tokens) - 2 != n_features:
                    raise ParseError(
                        content_path,
                        line_number,
                        "expected {} features, found {}".format(n_features, len(tokens) - 2),
                    )
                try:
                    values = [float(t) for t in tokens[1:-1]]
                except ValueError:
                    raise ParseError(content_path, line_number, "non-numeric feature value")
                if tokens[0] in seen:
                    raise ParseError(content_path, line_number, "duplicate id '{}'".format(tokens[0]))
                seen.add(tokens[0])
                node_ids.append(tokens[0])
                rows.append(values)
                raw_labels.append(tokens[-1])
        if len(node_ids) == 0:
            raise ParseError(content_path, 0, "no nodes found")
        self.node_ids = node_ids
        self.features = np.asarray(rows, dtype=np.float64)
        self.label_names = sorted(set(raw_labels))
        lookup = {name: i for i, name in enumerate(self.label_names)}
        self.labels = np.array([lookup[name] for name in raw_labels], dtype=np.int64)
        return None

    def read_cites(self, cites_path):
        """Read the edge list, dropping edges with unknown ids

        :param cites_path: path to the ``.cites`` file
        :type cites_path: str
        :return: None
        :rtype: None
        """
        index = {node_id: i for i, node_id in enumerate(self.node_ids)}
        edges = []
        dropped = 0
        with open(cites_path, "r", encoding=self.reading_encoding) as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                tokens = self._split(line)
                if len(tokens) != 2:
                    raise ParseError(cites_path, line_number, "expected 'id_a id_b'")
                a, b = tokens
                if a not in index or b not in index:
                    dropped += 1
                    continue
                edges.append((index[a], index[b]))
        self.edges = edges
        self.n_dropped_edges = dropped
        return None

    def load_data(self, content_path, cites_path):
        """Load both files and build the largest-connected-component graph

        :param content_path: path to the ``.content`` file
        :type content_path: str
        :param cites_path: path to the ``.cites`` file
        :type cites_path: str
        :return: graph
        :rtype: :class:`wtawp.datasets.core.Graph`
        """
        self.read_content(content_path)
        self.read_cites(cites_path)
        n = len(self.node_ids)
        adj = edges_to_adjacency(n_nodes=n, edges=self.edges)
        full = Graph(adjacency=adj, features=self.features, labels=self.labels, name=self.name)
        lcc, _ = largest_connected_component(full)
        if lcc.n_nodes == 0:
            raise ValueError("{}: empty connected component".format(self.name))
        # remap labels over the retained nodes
        present = np.unique(lcc.labels)
        remap = np.full(len(self.label_names), -1, dtype=np.int64)
        remap[present] = np.arange(len(present))
        graph = Graph(
            adjacency=lcc.adjacency,
            features=row_normalize(lcc.features),
            labels=remap[lcc.labels],
            name=self.name,
        )
        graph.validate()
        return graph


def load_citation_dataset(content_path, cites_path, name=None):
    """Load a raw citation dataset (Cora / Citeseer format)

    :param content_path: path to the ``.content`` file
    :type content_path: str
    :param cites_path: path to the ``.cites`` file
    :type cites_path: str
    :param name: dataset name. If None, taken from the content file name
    :type name: str
    :return: largest-connected-component graph
    :rtype: :class:`wtawp.datasets.core.Graph`
    """
    if name is None:
        name = os.path.splitext(os.path.basename(content_path))[0]
    parser = CitationParser(name=name)
    return parser.load_data(content_path=content_path, cites_path=cites_path)
