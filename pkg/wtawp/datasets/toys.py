"""
Synthetic datasets

Description:
    The ``toys`` module provides the seeded 2-D generators used by the
    vanishing-gradient experiments: a linearly separable two-Gaussian set with a
    k-nearest-neighbour graph, and the classic two moons (no graph).

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Example
-------

.. code-block:: python

    from wtawp.datasets import toys

    cfg = toys.ToyConfig(nodes_per_class=100, k_neighbors=3, seed=1)
    graph = toys.generate_linear_toy(cfg)
    print(graph)

"""
import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from wtawp.root import Options, check
from wtawp.datasets.core import Graph, edges_to_adjacency

# class means of the linear toy set
LINEAR_TOY_MEANS = np.array([[-1.5, -1.5], [1.5, 1.5]])


class ToyConfig(Options):
    """
    Options of the linearly separable toy dataset.

    """

    fields = ("nodes_per_class", "k_neighbors", "noise_std", "seed")

    def __init__(self, nodes_per_class=100, k_neighbors=3, noise_std=0.6, seed=0):
        super().__init__()
        self.nodes_per_class = nodes_per_class
        self.k_neighbors = k_neighbors
        self.noise_std = noise_std
        self.seed = seed
        self.validate()

    def validate(self):
        check(int(self.k_neighbors) >= 1, "k_neighbors must be >= 1")
        check(
            int(self.nodes_per_class) >= int(self.k_neighbors) + 1,
            "nodes_per_class ({}) must be >= k_neighbors + 1 ({})".format(
                self.nodes_per_class, int(self.k_neighbors) + 1
            ),
        )
        check(float(self.noise_std) >= 0, "noise_std must be >= 0")
        return None


def knn_adjacency(points, k):
    """Symmetrized k-nearest-neighbour graph under Euclidean distance

    ``(i, j)`` is an edge when either node ranks the other among its ``k``
    nearest (self excluded). Ties at equal distance go to the lower node id.

    :param points: ``n x dim`` coordinates
    :type points: :class:`numpy.ndarray`
    :param k: number of neighbours
    :type k: int
    :return: adjacency matrix
    :rtype: :class:`scipy.sparse.csr_matrix`
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(int(k), n - 1)
    if k < 1:
        return sp.csr_matrix((n, n), dtype=np.float64)
    dist = cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps lower ids first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    edges = np.stack([rows, order.ravel()], axis=1)
    return edges_to_adjacency(n_nodes=n, edges=edges)


def generate_linear_toy(cfg=None):
    """Generate the linearly separable two-Gaussian toy graph

    Node positions are the features; class 0 nodes come first.

    :param cfg: dataset options. If None, the defaults are used
    :type cfg: :class:`ToyConfig`
    :return: graph with ``2 * nodes_per_class`` nodes
    :rtype: :class:`Graph`
    """
    if cfg is None:
        cfg = ToyConfig()
    cfg.validate()
    n_per = int(cfg.nodes_per_class)
    rng = np.random.default_rng(cfg.seed)
    blocks = []
    for c in range(2):
        noise = rng.normal(loc=0.0, scale=1.0, size=(n_per, 2))
        blocks.append(LINEAR_TOY_MEANS[c] + float(cfg.noise_std) * noise)
    points = np.concatenate(blocks, axis=0)
    labels = np.repeat(np.arange(2), n_per)
    adj = knn_adjacency(points, k=cfg.k_neighbors)
    return Graph(adjacency=adj, features=points, labels=labels, name="linear_toy")


def generate_two_moons(n_per_class=100, noise_std=0.1, seed=0):
    """Generate the two interleaved half-circles (empty adjacency)

    Class 0 lies on ``(cos t, sin t)`` and class 1 on ``(1 - cos t, 0.5 - sin t)``
    with ``t`` uniform in ``[0, pi]``, plus isotropic Gaussian noise.

    :param n_per_class: points per class
    :type n_per_class: int
    :param noise_std: standard deviation of the additive noise
    :type noise_std: float
    :param seed: random seed
    :type seed: int
    :return: graph without edges
    :rtype: :class:`Graph`
    """
    n_per = int(n_per_class)
    if n_per < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, np.pi, size=n_per)
    t1 = rng.uniform(0.0, np.pi, size=n_per)
    moon0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    moon1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    points = np.concatenate([moon0, moon1], axis=0)
    if noise_std > 0:
        points = points + rng.normal(0.0, noise_std, size=points.shape)
    labels = np.repeat(np.arange(2), n_per)
    n = 2 * n_per
    adj = sp.csr_matrix((n, n), dtype=np.float64)
    return Graph(adjacency=adj, features=points, labels=labels, name="two_moons")
