import unittest
import numpy as np
import scipy.sparse as sp
from wtawp import attacks, awp, nn
from wtawp.root import ConfigError
from wtawp.datasets import core as dcore, toys
from tests.core import assert_symmetric_no_loops, slow


def edge_set(graph):
    return set(tuple(e) for e in graph.edges().tolist())


class TestAttackSpec(unittest.TestCase):

    def test_budget(self):
        self.assertEqual(attacks.AttackSpec(budget_fraction=0.05).budget(599), 29)
        self.assertEqual(attacks.AttackSpec(budget_fraction=0.05, n_flips=7).budget(599), 7)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            attacks.AttackSpec(kind="nettack")
        with self.assertRaises(ConfigError):
            attacks.AttackSpec(budget_fraction=0.0)


class TestDice(unittest.TestCase):

    def setUp(self):
        self.graph = toys.generate_linear_toy(toys.ToyConfig(seed=1))
        self.spec = attacks.AttackSpec(kind="dice", budget_fraction=0.05, seed=4)
        self.attacked = attacks.dice_attack(self.graph, self.spec)

    def test_flip_count(self):
        clean = edge_set(self.graph)
        expected = int(np.floor(0.05 * len(clean)))
        self.assertEqual(self.attacked.n_flips, expected)
        self.assertEqual(len(clean ^ edge_set(self.attacked.graph)), expected)
        assert_symmetric_no_loops(self.attacked.graph.adjacency)

    def test_class_constraints(self):
        labels = self.graph.labels
        clean = edge_set(self.graph)
        for i, j in self.attacked.removed_edges:
            self.assertIn((i, j), clean)
            self.assertEqual(labels[i], labels[j])
        for i, j in self.attacked.added_edges:
            self.assertNotIn((i, j), clean)
            self.assertNotEqual(labels[i], labels[j])

    def test_seeded(self):
        again = attacks.dice_attack(self.graph, self.spec)
        other = attacks.dice_attack(self.graph, self.spec.copy(seed=5))
        self.assertEqual(again.to_dict(), self.attacked.to_dict())
        self.assertNotEqual(other.to_dict(), self.attacked.to_dict())

    def test_edgeless_graph(self):
        empty = self.graph.with_adjacency(sp.csr_matrix((self.graph.n_nodes, self.graph.n_nodes)))
        attacked = attacks.dice_attack(empty, attacks.AttackSpec(n_flips=3))
        self.assertEqual(len(attacked.added_edges), 3)
        self.assertEqual(attacked.removed_edges, [])
        self.assertEqual(attacks.dice_attack(empty, attacks.AttackSpec()).n_flips, 0)

    def test_out_of_candidates(self):
        graph = dcore.Graph(sp.csr_matrix((3, 3)), np.zeros((3, 1)), [0, 0, 1])
        with self.assertRaises(ValueError):
            attacks.dice_attack(graph, attacks.AttackSpec(n_flips=3))


class TestRandomFlip(unittest.TestCase):

    def setUp(self):
        self.graph = toys.generate_linear_toy(toys.ToyConfig(nodes_per_class=20, seed=2))

    def test_involution(self):
        attacked = attacks.random_flip(self.graph, attacks.AttackSpec(kind="random_flip", n_flips=15, seed=0))
        self.assertEqual(attacked.n_flips, 15)
        restored = attacks.apply_flips(attacked.graph, attacked.flips())
        self.assertEqual(edge_set(restored), edge_set(self.graph))

    def test_budget_above_pairs(self):
        graph = dcore.Graph(sp.csr_matrix((3, 3)), np.zeros((3, 1)), [0, 1, 0])
        with self.assertRaises(ValueError):
            attacks.random_flip(graph, attacks.AttackSpec(kind="random_flip", n_flips=4))
        attacked = attacks.run_attack(graph, attacks.AttackSpec(kind="random_flip", n_flips=3))
        self.assertEqual(attacked.graph.n_edges, 3)

    def test_self_loop_flip(self):
        with self.assertRaises(ValueError):
            attacks.apply_flips(self.graph, [(1, 1)])


class TestProtocols(unittest.TestCase):

    def setUp(self):
        self.graph = toys.generate_linear_toy(toys.ToyConfig(nodes_per_class=20, seed=3))
        self.split = dcore.make_split(self.graph, seed=3)
        self.train_cfg = awp.TrainConfig(epochs=10, hidden_dim=8, seed=1)
        self.spec = awp.build_model_spec("GCN2", self.graph, self.train_cfg)

    def test_evasion_on_clean_graph(self):
        params = nn.init_params(self.spec, seed=0)
        out = attacks.evaluate_evasion(self.spec, params, self.graph, self.graph, self.split)
        self.assertEqual(out["clean_acc"], out["attacked_acc"])

    def test_poisoning_on_clean_graph(self):
        out = attacks.evaluate_poisoning(self.spec, self.graph, self.graph, self.split, self.train_cfg)
        _, report = awp.train(self.spec, self.graph, self.split, self.train_cfg)
        self.assertEqual(out["attacked_acc"], report.test_acc)

    def test_poisoning_size_mismatch(self):
        smaller = self.graph.subgraph(np.arange(10))
        with self.assertRaises(ValueError):
            attacks.evaluate_poisoning(self.spec, self.graph, smaller, self.split, self.train_cfg)


class TestDiceHarm(unittest.TestCase):

    def toy(self, seed):
        graph = toys.generate_linear_toy(toys.ToyConfig(seed=seed))
        split = dcore.make_split(graph, seed=seed)
        train_cfg = awp.TrainConfig(seed=seed)
        spec = awp.build_model_spec("GCN2", graph, train_cfg)
        return graph, split, train_cfg, spec

    @slow
    def test_evasion(self):
        clean, attacked = [], []
        for s in range(10):
            graph, split, train_cfg, spec = self.toy(s)
            params, _ = awp.train(spec, graph, split, train_cfg)
            perturbed = attacks.dice_attack(graph, attacks.AttackSpec(budget_fraction=0.10, seed=s))
            out = attacks.evaluate_evasion(spec, params, graph, perturbed.graph, split)
            clean.append(out["clean_acc"])
            attacked.append(out["attacked_acc"])
        self.assertLessEqual(np.mean(attacked), np.mean(clean))

    @slow
    def test_poisoning(self):
        clean, attacked = [], []
        for s in range(10):
            graph, split, train_cfg, spec = self.toy(s)
            _, report = awp.train(spec, graph, split, train_cfg)
            perturbed = attacks.dice_attack(graph, attacks.AttackSpec(budget_fraction=0.05, seed=s))
            out = attacks.evaluate_poisoning(spec, graph, perturbed.graph, split, train_cfg)
            clean.append(report.test_acc)
            attacked.append(out["attacked_acc"])
        self.assertLess(np.mean(attacked), np.mean(clean))


if __name__ == "__main__":
    unittest.main()
