import os
import unittest
import numpy as np
import pandas as pd
from wtawp.datasets.core import Graph, edges_to_adjacency

datafolder = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")

# long reproductions run only with WTAWP_SLOW=1
SLOW = os.environ.get("WTAWP_SLOW", "0") == "1"
slow = unittest.skipUnless(SLOW, "set WTAWP_SLOW=1 to run long reproductions")

# benchmark reproductions also need the raw Cora files (cora.content, cora.cites)
CORA_DIR = os.environ.get("WTAWP_CORA_DIR", "")
cora = unittest.skipUnless(
    SLOW and os.path.isfile(os.path.join(CORA_DIR, "cora.content")),
    "set WTAWP_SLOW=1 and WTAWP_CORA_DIR to the raw Cora folder to run benchmark reproductions",
)


def assert_columns_in_dataframe(df, expected_columns):
    assert isinstance(df, pd.DataFrame)
    actual_columns = list(df.columns)
    msg = f"The DataFrame should have columns {expected_columns} and no others, got {actual_columns}."
    assert actual_columns == expected_columns, msg


def assert_file_exists(file_path):
    """Assert that the given file path points to an existing file."""
    msg = f"The file path '{file_path}' does not point to an existing file."
    assert os.path.isfile(file_path), msg


def assert_symmetric_no_loops(adjacency):
    dense = adjacency.toarray()
    assert np.array_equal(dense, dense.T), "adjacency is not symmetric"
    assert np.all(np.diag(dense) == 0), "adjacency has self-loops"


def random_graph(n_nodes, edge_prob, seed, n_features=3, n_classes=2):
    """Random undirected graph with every class present"""
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < edge_prob]
    labels = np.arange(n_nodes) % n_classes
    rng.shuffle(labels)
    return Graph(
        adjacency=edges_to_adjacency(n_nodes, pairs),
        features=rng.standard_normal((n_nodes, n_features)),
        labels=labels,
        name="random",
    )


def path_graph(n_nodes):
    return Graph(
        adjacency=edges_to_adjacency(n_nodes, [(i, i + 1) for i in range(n_nodes - 1)]),
        features=np.eye(n_nodes),
        labels=np.arange(n_nodes) % 2,
        name="path",
    )


def bfs_components(adjacency):
    """Connected components by plain breadth-first search"""
    dense = adjacency.toarray() > 0
    n = len(dense)
    seen = np.full(n, False)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        queue = [start]
        seen[start] = True
        comp = []
        while queue:
            v = queue.pop(0)
            comp.append(v)
            for u in np.flatnonzero(dense[v]):
                if not seen[u]:
                    seen[u] = True
                    queue.append(u)
        components.append(sorted(comp))
    return components
