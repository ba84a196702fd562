"""
Graph structure attacks

Description:
    The ``attacks`` module provides the edge-flip adversaries used for the
    robustness evaluation (DICE and a random-flip baseline) and the evasion and
    poisoning protocols.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

DICE ("delete internally, connect externally") flips ``floor(budget_fraction * |E|)``
undirected edges. Every flip is, with probability 1/2, the removal of an edge
joining two nodes of the same class or the insertion of an absent edge
joining two nodes of different classes. Ground-truth labels of all nodes are
used.

- Evasion: the model trained on the clean graph is tested on the attacked one.
- Poisoning: a fresh model is trained and tested on the attacked graph.

Example
-------

.. code-block:: python

    from wtawp import attacks

    spec = attacks.AttackSpec(kind="dice", budget_fraction=0.05, seed=0)
    perturbed = attacks.dice_attack(graph, spec)
    print(len(perturbed.added_edges), len(perturbed.removed_edges))

"""
import json
import numpy as np

from wtawp import nn
from wtawp.awp import train
from wtawp.root import Options, check
from wtawp.datasets.core import edges_to_adjacency, normalize_adjacency

ATTACK_KINDS = ("dice", "random_flip")


class AttackSpec(Options):
    """
    Attack options. ``n_flips``, when set, overrides ``budget_fraction``.

    """

    fields = ("kind", "budget_fraction", "seed", "n_flips")

    def __init__(self, kind="dice", budget_fraction=0.05, seed=0, n_flips=None):
        super().__init__()
        self.kind = kind
        self.budget_fraction = budget_fraction
        self.seed = seed
        self.n_flips = n_flips
        self.validate()

    def validate(self):
        check(self.kind in ATTACK_KINDS, "kind must be one of {}".format(ATTACK_KINDS))
        check(0 < float(self.budget_fraction) < 1, "budget_fraction must be in (0, 1)")
        check(self.n_flips is None or int(self.n_flips) >= 0, "n_flips must be >= 0")
        return None

    def budget(self, n_edges):
        """Number of undirected flips for a graph with ``n_edges`` edges"""
        if self.n_flips is not None:
            return int(self.n_flips)
        return int(np.floor(float(self.budget_fraction) * n_edges))


class PerturbedGraph:
    """
    An attacked graph and the flips that produced it.

    """

    def __init__(self, graph, added_edges, removed_edges):
        self.graph = graph
        self.added_edges = [tuple(int(v) for v in e) for e in added_edges]
        self.removed_edges = [tuple(int(v) for v in e) for e in removed_edges]

    def __str__(self):
        return "[PerturbedGraph {}] added: {} removed: {}".format(
            self.graph.name, len(self.added_edges), len(self.removed_edges)
        )

    @property
    def n_flips(self):
        return len(self.added_edges) + len(self.removed_edges)

    def flips(self):
        """All flipped pairs ``[i, j]`` with ``i < j``, sorted"""
        return sorted([list(e) for e in self.added_edges + self.removed_edges])

    def to_dict(self):
        return {
            "added_edges": [list(e) for e in self.added_edges],
            "removed_edges": [list(e) for e in self.removed_edges],
            "flips": self.flips(),
        }

    def to_json(self, file_path):
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        return file_path


def _pair(i, j):
    return (int(i), int(j)) if i < j else (int(j), int(i))


def _rebuild(graph, edge_set, suffix):
    edges = sorted(edge_set)
    adj = edges_to_adjacency(n_nodes=graph.n_nodes, edges=edges)
    return graph.with_adjacency(adj, name="{}_{}".format(graph.name, suffix))


def dice_attack(graph, spec):
    """Delete edges inside classes and insert edges across classes at random

    When one flip type runs out of candidates the other one is used.

    :param graph: clean graph
    :type graph: :class:`wtawp.datasets.core.Graph`
    :param spec: attack options
    :type spec: :class:`AttackSpec`
    :return: perturbed graph
    :rtype: :class:`PerturbedGraph`
    """
    rng = np.random.default_rng(spec.seed)
    labels = graph.labels
    n = graph.n_nodes
    existing = set(_pair(i, j) for i, j in graph.edges())
    intra = sorted(e for e in existing if labels[e[0]] == labels[e[1]])
    n_inter_existing = len(existing) - len(intra)
    counts = np.bincount(labels, minlength=graph.n_classes).astype(np.int64)
    n_inter_pairs = (n * n - int(np.sum(counts * counts))) // 2
    n_inter_free = n_inter_pairs - n_inter_existing

    added = []
    added_set = set()
    removed = []
    for _ in range(spec.budget(len(existing))):
        remove = rng.random() < 0.5
        if remove and not intra:
            remove = False
        if not remove and n_inter_free == 0:
            remove = True
        if remove and not intra:
            raise ValueError(
                "DICE ran out of candidates after {} flips".format(len(added) + len(removed))
            )
        if remove:
            k = int(rng.integers(len(intra)))
            edge = intra[k]
            intra[k] = intra[-1]
            intra.pop()
            removed.append(edge)
        else:
            while True:
                i, j = rng.integers(n, size=2)
                if labels[i] == labels[j]:
                    continue
                edge = _pair(i, j)
                if edge in existing or edge in added_set:
                    continue
                break
            added.append(edge)
            added_set.add(edge)
            n_inter_free -= 1
    edge_set = (existing - set(removed)) | added_set
    return PerturbedGraph(_rebuild(graph, edge_set, "dice"), added, removed)


def random_flip(graph, spec):
    """Flip the presence of distinct node pairs drawn uniformly (no self-loops)

    :param graph: clean graph
    :type graph: :class:`wtawp.datasets.core.Graph`
    :param spec: attack options
    :type spec: :class:`AttackSpec`
    :return: perturbed graph
    :rtype: :class:`PerturbedGraph`
    """
    rng = np.random.default_rng(spec.seed)
    n = graph.n_nodes
    existing = set(_pair(i, j) for i, j in graph.edges())
    budget = spec.budget(len(existing))
    if budget > n * (n - 1) // 2:
        raise ValueError("budget of {} flips exceeds the {} node pairs".format(budget, n * (n - 1) // 2))
    chosen = []
    chosen_set = set()
    while len(chosen) < budget:
        i, j = rng.integers(n, size=2)
        if i == j:
            continue
        edge = _pair(i, j)
        if edge in chosen_set:
            continue
        chosen.append(edge)
        chosen_set.add(edge)
    added = [e for e in chosen if e not in existing]
    removed = [e for e in chosen if e in existing]
    return PerturbedGraph(_rebuild(graph, existing ^ chosen_set, "flip"), added, removed)


def run_attack(graph, spec):
    """Dispatch on ``spec.kind``"""
    if spec.kind == "dice":
        return dice_attack(graph, spec)
    return random_flip(graph, spec)


def apply_flips(graph, flips):
    """Toggle the presence of every listed pair

    :param flips: ``[i, j]`` pairs
    :type flips: list
    :return: new graph
    :rtype: :class:`wtawp.datasets.core.Graph`
    """
    edge_set = set(_pair(i, j) for i, j in graph.edges())
    for i, j in flips:
        if i == j:
            raise ValueError("self-loop flip ({}, {})".format(i, j))
        edge_set ^= {_pair(i, j)}
    return _rebuild(graph, edge_set, "flipped")


def evaluate_evasion(spec, params, clean_graph, attacked_graph, split):
    """Test accuracy of a trained model on the clean and the attacked graph

    :return: ``{"clean_acc", "attacked_acc"}``
    :rtype: dict
    """
    result = {}
    for key, g in (("clean_acc", clean_graph), ("attacked_acc", attacked_graph)):
        logits = nn.predict(spec, params, normalize_adjacency(g), g.features)
        result[key] = nn.accuracy(logits, g.labels, split.test_ids)
    return result


def evaluate_poisoning(spec, clean_graph, attacked_graph, split, train_cfg, awp_cfg=None, logger=None):
    """Train a fresh model on the attacked graph and test it there

    :return: ``{"attacked_acc", "report"}``
    :rtype: dict
    """
    if attacked_graph.n_nodes != clean_graph.n_nodes:
        raise ValueError("attacked graph has {} nodes, clean graph {}".format(
            attacked_graph.n_nodes, clean_graph.n_nodes
        ))
    _, report = train(spec, attacked_graph, split, train_cfg, awp_cfg=awp_cfg, logger=logger, name="poisoned")
    return {"attacked_acc": report.test_acc, "report": report}
