import os
import shutil
import tempfile
import unittest
import numpy as np
from wtawp import analyst, awp, tools
from wtawp.parsers import planetoid
from wtawp.datasets import core as dcore
from tests.core import CORA_DIR, cora

# benchmark numbers come from perturbations placed on the radius
ON_RADIUS = {"projection": "sphere"}


def cora_config(**kwargs):
    dct = {
        "name": "cora",
        "seed": 0,
        "dataset": {
            "kind": "citation",
            "content_path": os.path.join(CORA_DIR, "cora.content"),
            "cites_path": os.path.join(CORA_DIR, "cora.cites"),
        },
        "model": {"kind": "GCN2"},
        "diagnose": {"smoothness": {"n_samples": 5}},
    }
    dct.update(kwargs)
    return tools.ExperimentConfig.from_dict(dct)


@cora
class TestCora(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.graph = planetoid.load_citation_dataset(
            os.path.join(CORA_DIR, "cora.content"), os.path.join(CORA_DIR, "cora.cites")
        )

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def run_pair(self, awp_cfg, seed):
        split = dcore.make_split(self.graph, seed=seed)
        train_cfg = awp.TrainConfig(seed=seed)
        spec = awp.build_model_spec("GCN2", self.graph, train_cfg)
        out = []
        for cfg in (None, awp_cfg):
            params, report = awp.train(spec, self.graph, split, train_cfg, cfg)
            out.append((params, report))
        return spec, split, out

    def test_largest_component(self):
        self.assertEqual(self.graph.n_nodes, 2485)
        self.assertEqual(self.graph.n_classes, 7)
        self.assertEqual(dcore.split_sizes(self.graph.n_nodes), (249, 249, 1987))

    def test_clean_accuracy(self):
        cfg = cora_config(
            awp=dict(rho=1.0, lam=0.7, **ON_RADIUS), splits=5, inits_per_split=2
        )
        summary = tools.PAIRED(cfg, outdir=self.tmp)["summary"]
        self.assertEqual(summary["n_pairs"], 10)
        self.assertTrue(0.80 <= summary["baseline_mean_acc"] <= 0.87)
        self.assertGreaterEqual(summary["mean_delta"], 0.003)
        self.assertGreaterEqual(summary["awp_wins"], 7)

    def test_ablation_collapse(self):
        weighted = awp.AwpConfig.wt_awp(1.0, 0.7, **ON_RADIUS)
        truncated = awp.AwpConfig.t_awp(5.0, **ON_RADIUS)
        full = awp.AwpConfig.awp(5.0, **ON_RADIUS)
        split = dcore.make_split(self.graph, seed=0)
        for seed in range(2):
            train_cfg = awp.TrainConfig(seed=seed)
            spec = awp.build_model_spec("GCN2", self.graph, train_cfg)
            accs = {}
            for name, cfg in (("weighted", weighted), ("truncated", truncated), ("full", full)):
                accs[name] = awp.train(spec, self.graph, split, train_cfg, cfg)[1].test_acc
            self.assertLessEqual(accs["truncated"], 0.40)
            self.assertLessEqual(accs["full"], 0.40)
            self.assertGreaterEqual(accs["weighted"] - max(accs["truncated"], accs["full"]), 0.30)

    def test_flatter_landscape(self):
        flatter = 0
        for seed in range(10):
            spec, split, ((p_gcn, _), (p_awp, _)) = self.run_pair(
                awp.AwpConfig.wt_awp(0.5, 0.5, **ON_RADIUS), seed
            )
            slices = analyst.LandscapeProbe(alphas=(-0.5, -0.25, 0.0, 0.25, 0.5), n_directions=10, seed=seed)
            offsets = []
            for params in (p_gcn, p_awp):
                df = analyst.landscape_slice(spec, params, self.graph, slices, node_set=split.train_ids)
                offsets.append(float(df[np.abs(df["alpha"]) == 0.5]["mean_offset"].mean()))
            flatter += int(offsets[1] < offsets[0])
        self.assertGreaterEqual(flatter, 7)

    def test_dice_evasion(self):
        cfg = cora_config(
            awp=dict(rho=1.0, lam=0.7, **ON_RADIUS),
            attack={"kind": "dice", "budget_fraction": 0.05, "protocols": ["evasion"]},
            splits=5,
            inits_per_split=1,
        )
        result = tools.ATTACK(cfg, outdir=self.tmp)
        budget = int(np.floor(0.05 * self.graph.n_edges))
        self.assertTrue((result["runs"]["n_flips"] == budget).all())
        agg = result["aggregate"].set_index("variant")
        self.assertGreaterEqual(agg.loc["awp", "attacked_mean"], agg.loc["baseline", "attacked_mean"])
        for variant in ("awp", "baseline"):
            self.assertLess(agg.loc[variant, "attacked_mean"], agg.loc[variant, "clean_mean"])

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


if __name__ == "__main__":
    unittest.main()
