import os
import shutil
import tempfile
import unittest
import numpy as np
from wtawp import awp, nn
from wtawp.root import ConfigError, TrainingError
from wtawp.datasets import core as dcore, toys
from tests import core


def toy_run(awp_cfg, seed=0, epochs=200, kind="GCN2"):
    graph = toys.generate_linear_toy(toys.ToyConfig(seed=seed))
    split = dcore.make_split(graph, seed=seed)
    train_cfg = awp.TrainConfig(epochs=epochs, seed=seed)
    spec = awp.build_model_spec(kind, graph, train_cfg)
    return awp.train(spec, graph, split, train_cfg, awp_cfg)


class TestAwpConfig(unittest.TestCase):

    def test_alias_and_validation(self):
        cfg = awp.AwpConfig.from_dict({"rho": 1.0, "lambda": 0.7})
        self.assertEqual(cfg.lam, 0.7)
        with self.assertRaises(ConfigError):
            awp.AwpConfig(lam=1.5)
        with self.assertRaises(ConfigError):
            awp.AwpConfig(rho=-0.1)
        with self.assertRaises(ConfigError):
            awp.AwpConfig(projection="cube")
        with self.assertRaises(ConfigError):
            awp.AwpConfig.from_dict({"rh0": 1.0})

    def test_presets(self):
        self.assertTrue(awp.AwpConfig.vanilla().is_vanilla)
        self.assertTrue(awp.AwpConfig(rho=0.0, lam=0.5).is_vanilla)
        self.assertEqual(awp.AwpConfig.awp(1.0).layer_mask(3), [True, True, True])
        self.assertEqual(awp.AwpConfig.t_awp(1.0).layer_mask(2), [True, False])
        self.assertEqual(awp.AwpConfig.w_awp(1.0, 0.5).lam, 0.5)
        self.assertEqual(awp.AwpConfig.wt_awp(1.0, 0.5, perturb_layers="last").layer_mask(3), [False, False, True])

    def test_layer_mask(self):
        cfg = awp.AwpConfig(rho=1.0, lam=1.0)
        self.assertEqual(cfg.layer_mask(2), [True, False])
        self.assertEqual(cfg.layer_mask(2, default=[False, True]), [False, True])
        listed = awp.AwpConfig(rho=1.0, lam=1.0, perturb_layers=[1, 1, 0])
        self.assertEqual(listed.layer_mask(3), [True, True, False])
        with self.assertRaises(ConfigError):
            listed.layer_mask(2)


class TestProjection(unittest.TestCase):

    def test_ball(self):
        delta = nn.GradientSet([np.array([[3.0, 4.0]]), np.array([[0.3, 0.4]]), np.ones((1, 2))])
        out = awp.project_to_ball(delta, np.array([1.0, 1.0, 0.0]))
        np.testing.assert_allclose(out[0], [[0.6, 0.8]], rtol=1e-15)
        np.testing.assert_array_equal(out[1], [[0.3, 0.4]])
        np.testing.assert_array_equal(out[2], np.zeros((1, 2)))

    def test_sphere(self):
        delta = nn.GradientSet([np.array([[0.3, 0.4]]), np.zeros((1, 2))])
        out = awp.project_to_sphere(delta, np.array([1.0, 1.0]))
        np.testing.assert_allclose(out[0], [[0.6, 0.8]], rtol=1e-12)
        np.testing.assert_array_equal(out[1], np.zeros((1, 2)))
        np.testing.assert_array_equal(awp.project(delta, np.array([1.0, 1.0]), "ball")[0], delta[0])

    def test_radius_count(self):
        with self.assertRaises(ValueError):
            awp.project_to_ball(nn.GradientSet([np.ones((1, 1))]), np.ones(2))

    def test_layer_radii(self):
        params = nn.ModelParams([np.array([[3.0, 4.0]]), np.ones((2, 2))])
        np.testing.assert_allclose(awp.layer_radii(params, 0.5), [2.5, 0.0])
        np.testing.assert_allclose(awp.layer_radii(params, 0.5, mask=[True, True]), [2.5, 1.0])
        with self.assertRaises(ValueError):
            awp.layer_radii(params, -1.0)


class TestPerturbation(unittest.TestCase):

    def setUp(self):
        self.problem = nn.random_problem("GCN2", seed=3)
        self.spec, self.params, self.adj, self.features, self.labels, self.nodes = self.problem

    def test_norms_within_radius(self):
        for projection in ("sphere", "ball"):
            for steps in (1, 5):
                cfg = awp.AwpConfig(rho=0.3, lam=0.5, pgd_steps=steps, projection=projection)
                delta = awp.compute_perturbation(*self.problem, cfg)
                radii = awp.layer_radii(self.params, 0.3)
                norms = delta.layer_norms()
                self.assertLessEqual(norms[0], radii[0] * (1 + 1e-12))
                self.assertEqual(norms[1], 0.0)
                if projection == "sphere":
                    self.assertAlmostEqual(norms[0], radii[0], places=12)

    def test_default_projection_is_ball(self):
        self.assertEqual(awp.AwpConfig().projection, "ball")
        presets = (
            awp.AwpConfig.awp(1.0),
            awp.AwpConfig.t_awp(1.0),
            awp.AwpConfig.w_awp(1.0, 0.5),
            awp.AwpConfig.wt_awp(1.0, 0.5),
        )
        for cfg in presets:
            self.assertEqual(cfg.projection, "ball")

    def test_interior_gradient_is_kept(self):
        # radius far above the gradient norm
        cfg = awp.AwpConfig.wt_awp(rho=50.0, lam=0.5)
        delta = awp.compute_perturbation(*self.problem, cfg)
        _, grads = nn.loss_and_grad(*self.problem)
        self.assertLess(grads.layer_norms()[0], awp.layer_radii(self.params, 50.0)[0])
        np.testing.assert_array_equal(delta[0], grads[0])
        np.testing.assert_array_equal(delta[1], np.zeros_like(grads[1]))

    def test_one_step_matches_projected_gradient(self):
        _, grads = nn.loss_and_grad(*self.problem)
        for rho in (0.001, 0.01, 0.3, 50.0):
            delta = awp.compute_perturbation(*self.problem, awp.AwpConfig.awp(rho))
            for d, g, w in zip(delta.layers, grads.layers, self.params.layers):
                radius = rho * np.sqrt(np.sum(w ** 2))
                norm = np.sqrt(np.sum(g ** 2))
                expected = g * (radius / norm) if norm > radius else g
                np.testing.assert_allclose(d, expected, rtol=1e-12, atol=0)

    def test_zero_gradient(self):
        zero = nn.GradientSet([np.zeros_like(w) for w in self.params.layers])
        for projection in awp.PROJECTIONS:
            cfg = awp.AwpConfig.awp(1.0, projection=projection)
            delta = awp.compute_perturbation(*self.problem, cfg, grads=zero)
            np.testing.assert_array_equal(delta.layer_norms(), [0.0, 0.0])
        # all-zero weights are a critical point: the perturbed loss is the clean loss
        flat = nn.ModelParams([np.zeros_like(w) for w in self.params.layers], awp_mask=self.params.awp_mask)
        _, grads, parts = awp.wtawp_loss_and_grad(
            self.spec, flat, self.adj, self.features, self.labels, self.nodes, awp.AwpConfig.wt_awp(1.0, 0.5)
        )
        self.assertEqual(parts["perturbed_loss"], parts["base_loss"])
        np.testing.assert_array_equal(grads.layer_norms(), [0.0, 0.0])

    def test_vanilla_is_bit_identical(self):
        loss, grads = nn.loss_and_grad(*self.problem, dropout_seed=None)
        for cfg in (awp.AwpConfig(rho=1.0, lam=0.0), awp.AwpConfig(rho=0.0, lam=1.0), None):
            l2, g2, parts = awp.wtawp_loss_and_grad(*self.problem, cfg)
            self.assertEqual(l2, loss)
            self.assertEqual(parts["perturbed_loss"], loss)
            for a, b in zip(grads.layers, g2.layers):
                np.testing.assert_array_equal(a, b)

    def test_weighted_recomposition(self):
        cfg = awp.AwpConfig.wt_awp(rho=0.5, lam=0.5)
        loss, grads, parts = awp.wtawp_loss_and_grad(*self.problem, cfg)
        base_loss, base_grads = nn.loss_and_grad(*self.problem)
        delta = awp.compute_perturbation(*self.problem, cfg)
        pert_loss, pert_grads = nn.loss_and_grad(
            self.spec, self.params.add(delta), self.adj, self.features, self.labels, self.nodes
        )
        self.assertAlmostEqual(loss, 0.5 * pert_loss + 0.5 * base_loss, places=14)
        self.assertEqual(parts["base_loss"], base_loss)
        for g, gb, gp in zip(grads.layers, base_grads.layers, pert_grads.layers):
            np.testing.assert_allclose(g, 0.5 * gp + 0.5 * gb, rtol=1e-13, atol=1e-16)

    def test_truncated_leaves_other_layers(self):
        cfg = awp.AwpConfig.t_awp(rho=0.5, perturb_layers="last")
        delta = awp.compute_perturbation(*self.problem, cfg)
        np.testing.assert_array_equal(delta[0], np.zeros_like(delta[0]))
        self.assertGreater(delta.layer_norms()[1], 0.0)


class TestFirstOrderGap(unittest.TestCase):

    def setUp(self):
        self.problem = nn.random_problem("GCN2", seed=0)
        _, grads = nn.loss_and_grad(*self.problem)
        # below this rho every layer gradient lies outside its ball
        self.rho_active = float(np.min(grads.layer_norms() / self.problem[1].layer_norms()))

    def gap(self, rho, projection="ball"):
        cfg = awp.AwpConfig.awp(rho, projection=projection)
        return awp.exact_vs_approx_gradient_gap(*self.problem, cfg)["gap_norm"]

    def test_zero_radius(self):
        self.assertLessEqual(self.gap(0.0), 1e-6)
        self.assertLessEqual(self.gap(0.0, "sphere"), 1e-6)

    def test_gap_scales_with_radius(self):
        for rho in (0.4 * self.rho_active, 0.8 * self.rho_active):
            ratio = self.gap(rho) / self.gap(rho / 2)
            self.assertTrue(1.5 <= ratio <= 2.5, msg="rho={} ratio={}".format(rho, ratio))

    def test_gap_scales_with_radius_on_sphere(self):
        for rho in (0.02, 0.04):
            ratio = self.gap(rho, "sphere") / self.gap(rho / 2, "sphere")
            self.assertTrue(1.5 <= ratio <= 2.5, msg="rho={} ratio={}".format(rho, ratio))

    def test_cap(self):
        with self.assertRaises(ValueError):
            awp.exact_vs_approx_gradient_gap(*self.problem, awp.AwpConfig.awp(0.1), max_entries=5)


class TestLocalMinimumInvariance(unittest.TestCase):

    def test_quadratic(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            dim = int(rng.integers(1, 7))
            a = rng.standard_normal((dim, dim))
            hess = a @ a.T + 0.1 * np.eye(dim)

            def fun(theta):
                return 0.5 * theta @ hess @ theta

            def grad(theta):
                return hess @ theta

            at_zero = awp.perturbed_objective(fun, grad, np.zeros(dim), np.inf)
            self.assertEqual(at_zero, 0.0)
            points = rng.standard_normal((500, dim))
            points *= (rng.random(500) ** (1.0 / dim) / np.linalg.norm(points, axis=1))[:, None]
            values = [awp.perturbed_objective(fun, grad, p, np.inf) for p in points]
            self.assertGreaterEqual(min(values), at_zero)


class TestTrain(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def test_vanilla_toy(self):
        _, report = toy_run(None)
        self.assertGreaterEqual(report.test_acc, 0.9)
        self.assertEqual(len(report), 200)

    def test_report(self):
        _, report = toy_run(awp.AwpConfig.wt_awp(rho=0.5, lam=0.5), epochs=5)
        core.assert_columns_in_dataframe(report.to_dataframe(), list(awp.TrainReport.columns))
        summary = report.summary()
        self.assertEqual(summary["epochs"], 5)
        self.assertEqual(summary["best_val_acc"], float(np.max(report["val_acc"])))
        self.assertEqual(summary["best_epoch"], int(np.argmax(report["val_acc"])))
        file_path = report.to_csv(os.path.join(self.tmp, "report.csv"))
        core.assert_file_exists(file_path)

    def test_determinism(self):
        cfg = awp.AwpConfig.wt_awp(rho=1.0, lam=0.5)
        p1, r1 = toy_run(cfg, seed=2, epochs=10)
        p2, r2 = toy_run(cfg, seed=2, epochs=10)
        self.assertTrue(r1.to_dataframe().equals(r2.to_dataframe()))
        for a, b in zip(p1.layers, p2.layers):
            np.testing.assert_array_equal(a, b)

    def test_non_finite_loss(self):
        graph = toys.generate_linear_toy(toys.ToyConfig(nodes_per_class=10))
        features = graph.features.copy()
        features[0, 0] = np.inf
        bad = dcore.Graph(graph.adjacency, features, graph.labels)
        split = dcore.make_split(bad, seed=0)
        train_cfg = awp.TrainConfig(epochs=3)
        spec = awp.build_model_spec("GCN2", bad, train_cfg)
        with self.assertRaises(TrainingError) as ctx:
            awp.train(spec, bad, split, train_cfg)
        self.assertEqual(ctx.exception.epoch, 0)

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


class TestVanishingGradient(unittest.TestCase):
    # inside the ball the step stays the raw gradient whatever rho is, so the
    # collapse needs perturbations placed on the radius
    on_radius = {"projection": "sphere"}

    @core.slow
    def test_toy_accuracies(self):
        seeds = range(10)
        vanilla = np.mean([toy_run(None, seed=s)[1].test_acc for s in seeds])
        full = np.mean([toy_run(awp.AwpConfig.awp(2.5, **self.on_radius), seed=s)[1].test_acc for s in seeds])
        weighted = np.mean(
            [toy_run(awp.AwpConfig.wt_awp(2.5, 0.5, **self.on_radius), seed=s)[1].test_acc for s in seeds]
        )
        self.assertGreaterEqual(vanilla, 0.9)
        self.assertLessEqual(full, 0.6)
        self.assertGreaterEqual(weighted, 0.9)

    @core.slow
    def test_gradient_norm_collapse(self):
        _, full = toy_run(awp.AwpConfig.awp(5.0, **self.on_radius))
        _, weighted = toy_run(awp.AwpConfig.wt_awp(5.0, 0.7, **self.on_radius))
        self.assertGreaterEqual(np.mean(full["rel_grad_norm"][20:] < 1e-3), 0.8)
        self.assertGreaterEqual(np.mean(weighted["rel_grad_norm"][20:] > 1e-3), 0.5)

    @core.slow
    def test_linear_mlp(self):
        # largest radius of the ladder: full AWP collapses, truncated and weighted recover
        rho = 5.0
        full = toy_run(awp.AwpConfig.awp(rho, **self.on_radius), kind="MLP3")[1].test_acc
        truncated = toy_run(
            awp.AwpConfig.t_awp(rho, perturb_layers=[True, True, False], **self.on_radius), kind="MLP3"
        )[1].test_acc
        weighted = toy_run(awp.AwpConfig.w_awp(rho, 0.9, **self.on_radius), kind="MLP3")[1].test_acc
        self.assertLess(full, 0.6)
        self.assertGreaterEqual(truncated, 0.9)
        self.assertGreaterEqual(weighted, 0.9)

    @core.slow
    def test_ball_default_trains(self):
        seeds = range(10)
        weighted = np.mean([toy_run(awp.AwpConfig.wt_awp(2.5, 0.5), seed=s)[1].test_acc for s in seeds])
        self.assertGreaterEqual(weighted, 0.9)


if __name__ == "__main__":
    unittest.main()
