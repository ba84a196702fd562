"""
Experiment routines

Description:
    The ``tools`` module provides the experiment configuration and the routines
    behind every command-line tool: single training runs, (lambda, rho) sweeps,
    paired baseline/variant comparisons, diagnostics, robustness evaluation
    and toy dataset generation.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

An experiment is one JSON document:

.. code-block:: json

    {
        "name": "toy",
        "seed": 0,
        "dataset": {"kind": "linear_toy", "nodes_per_class": 100, "k_neighbors": 3},
        "model": {"kind": "GCN2"},
        "train": {"epochs": 200, "lr": 0.01},
        "awp": {"rho": 2.5, "lambda": 0.5, "perturb_layers": "first"},
        "baseline": null,
        "splits": 2,
        "inits_per_split": 5
    }

Unknown keys are rejected everywhere. Split ``s`` uses seed ``seed + s`` and
initialization ``i`` uses seed ``seed * 1000 + i``, so paired runs align
across variants.

Every tool writes into its own run directory
``<out>/<TOOL>_<name>_<hash>``, where ``hash`` is taken from the configuration
content. The directory holds ``config.json``, ``summary.json``, the CSV
outputs and ``logs.log``. CSV files never hold wall-clock values and re-runs
reproduce them byte by byte.

Example
-------

.. code-block:: python

    from wtawp import tools

    cfg = tools.load_config("toy.json")
    result = tools.TRAIN(cfg, outdir="runs", talk=True)
    print(result["summary"]["test_acc"])

"""
import os
import json
import time
import hashlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from wtawp import nn, awp, analyst, attacks
from wtawp.tui import logger_setup
from wtawp.root import Options, ConfigError, WtawpError, check
from wtawp.datasets import core, toys
from wtawp.parsers import planetoid

DATASET_KINDS = ("linear_toy", "two_moons", "citation", "graph_json")
DIAGNOSTICS = ("landscape", "smoothness", "bound", "gradcheck", "gapscale")
PROTOCOLS = ("evasion", "poisoning")
VARIANTS = ("baseline", "awp")


# ------------------------------ UTILS ------------------------------
def create_rundir(workplace, label="", suffix=None):
    """Create (or reuse) a run directory ``<workplace>/<label>_<suffix>``

    :param workplace: base directory
    :type workplace: str
    :param label: run label
    :type label: str
    :param suffix: optional suffix
    :type suffix: str
    :return: path to the run directory
    :rtype: str
    """
    if suffix is not None:
        label = label + "_" + suffix
    dir_path = os.path.join(workplace, label)
    os.makedirs(dir_path, exist_ok=True)
    return dir_path


def config_hash(cfg):
    """Short content hash of a configuration"""
    text = json.dumps(cfg.get_metadata(), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def write_json(dct, file_path):
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(dct, f, indent=2, sort_keys=True)
    return file_path


def _take(section, dct, allowed):
    if dct is None:
        dct = {}
    if not isinstance(dct, dict):
        raise ConfigError("{}: expected an object".format(section))
    dct = dict(dct)
    unknown = [k for k in dct if k not in allowed]
    if unknown:
        raise ConfigError("{}: unknown key(s) {}. Expected any of {}".format(section, sorted(unknown), list(allowed)))
    return dct


def _log_elapsed(logger, prompt, s_step, start_time):
    elapsed_time = time.time() - start_time
    logger.info("{} {} elapsed time: {} seconds".format(prompt, s_step, round(elapsed_time, 3)))
    return elapsed_time


def _map(func, tasks, jobs=1):
    # results come back in task order either way
    if jobs is None or int(jobs) <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
        return list(pool.map(func, tasks))


# ------------------------------ CONFIGURATION ------------------------------
class ExperimentConfig(Options):
    """
    The experiment configuration document.

    Sections are kept as plain dictionaries and converted to option objects
    on demand. ``validate()`` converts every section once, so a bad key or a
    missing file is reported at load time.

    """

    fields = (
        "name",
        "seed",
        "dataset",
        "model",
        "train",
        "awp",
        "baseline",
        "splits",
        "inits_per_split",
        "attack",
        "sweep",
        "diagnose",
    )

    def __init__(
        self,
        name="experiment",
        seed=0,
        dataset=None,
        model=None,
        train=None,
        awp=None,
        baseline=None,
        splits=20,
        inits_per_split=10,
        attack=None,
        sweep=None,
        diagnose=None,
    ):
        super().__init__()
        # relative dataset paths resolve against this folder
        self.base_dir = ""
        self.name = name
        self.seed = seed
        self.dataset = {"kind": "linear_toy"} if dataset is None else dataset
        self.model = {"kind": "GCN2"} if model is None else model
        self.train = {} if train is None else train
        self.awp = awp
        self.baseline = baseline
        self.splits = splits
        self.inits_per_split = inits_per_split
        self.attack = attack
        self.sweep = {} if sweep is None else sweep
        self.diagnose = {} if diagnose is None else diagnose
        self.validate()

    def validate(self):
        check(isinstance(self.name, str) and self.name != "", "name must be a non-empty string")
        check(int(self.seed) >= 0, "seed must be >= 0")
        check(int(self.splits) >= 1, "splits must be >= 1")
        check(int(self.inits_per_split) >= 1, "inits_per_split must be >= 1")
        self.dataset_options()
        self.model_options()
        self.train_config(0)
        self.awp_config()
        self.baseline_config()
        if self.attack is not None:
            self.attack_spec(0)
            self.attack_protocols()
        self.sweep_options()
        self.diagnose_options()
        return None

    # seeds
    def split_seed(self, split_index):
        return int(self.seed) + int(split_index)

    def init_seed(self, init_index):
        return int(self.seed) * 1000 + int(init_index)

    def seed_pairs(self):
        """All ``(split_seed, init_seed)`` pairs in run order"""
        return [
            (self.split_seed(s), self.init_seed(i))
            for s in range(int(self.splits))
            for i in range(int(self.inits_per_split))
        ]

    # dataset
    def _path(self, path):
        if os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    def dataset_options(self):
        """Get the dataset kind and its options

        :return: kind and options dictionary
        :rtype: tuple
        """
        check(isinstance(self.dataset, dict), "dataset: expected an object")
        dct = dict(self.dataset)
        kind = dct.pop("kind", "linear_toy")
        check(kind in DATASET_KINDS, "dataset.kind must be one of {}, got '{}'".format(DATASET_KINDS, kind))
        if kind == "linear_toy":
            return kind, {"cfg": toys.ToyConfig.from_dict(dct)}
        if kind == "two_moons":
            return kind, _take("dataset", dct, ("n_per_class", "noise_std", "seed"))
        if kind == "citation":
            dct = _take("dataset", dct, ("content_path", "cites_path", "name"))
            for key in ("content_path", "cites_path"):
                check(key in dct, "dataset.{} is required for citation datasets".format(key))
                dct[key] = self._path(dct[key])
                check(os.path.isfile(dct[key]), "file not found: {}".format(dct[key]))
            return kind, dct
        dct = _take("dataset", dct, ("path",))
        check("path" in dct, "dataset.path is required for graph_json datasets")
        dct["path"] = self._path(dct["path"])
        check(os.path.isfile(dct["path"]), "file not found: {}".format(dct["path"]))
        return kind, dct

    def load_graph(self):
        """Build or load the dataset graph

        :return: graph
        :rtype: :class:`wtawp.datasets.core.Graph`
        """
        kind, opts = self.dataset_options()
        if kind == "linear_toy":
            return toys.generate_linear_toy(opts["cfg"])
        if kind == "two_moons":
            return toys.generate_two_moons(**opts)
        if kind == "citation":
            return planetoid.load_citation_dataset(**opts)
        return core.load_graph_json(opts["path"])

    # model and training
    def model_options(self):
        dct = _take("model", self.model, ("kind", "ppnp_k", "ppnp_alpha"))
        dct.setdefault("kind", "GCN2")
        kind = dct.pop("kind")
        nn.ModelSpec.build(kind, n_features=1, n_classes=1, hidden_dim=1, **dct)
        return kind, dct

    def model_spec(self, graph):
        kind, dct = self.model_options()
        return awp.build_model_spec(kind, graph, self.train_config(0), **dct)

    def train_config(self, seed):
        dct = dict(self.train)
        check("seed" not in dct, "train.seed is derived from the top-level seed")
        dct["seed"] = int(seed)
        return awp.TrainConfig.from_dict(dct)

    def awp_config(self):
        return None if self.awp is None else awp.AwpConfig.from_dict(self.awp)

    def baseline_config(self):
        return None if self.baseline is None else awp.AwpConfig.from_dict(self.baseline)

    def variant_config(self, variant):
        check(variant in VARIANTS, "variant must be one of {}".format(VARIANTS))
        return self.awp_config() if variant == "awp" else self.baseline_config()

    # attack
    def attack_spec(self, seed_offset):
        dct = dict(self.attack or {})
        dct.pop("protocols", None)
        spec = attacks.AttackSpec.from_dict(dct)
        return spec.copy(seed=int(spec.seed) + int(seed_offset))

    def attack_protocols(self):
        protocols = list((self.attack or {}).get("protocols", PROTOCOLS))
        check(len(protocols) >= 1, "attack.protocols must not be empty")
        for p in protocols:
            check(p in PROTOCOLS, "attack.protocols must be drawn from {}".format(PROTOCOLS))
        return protocols

    # sweep
    def sweep_options(self):
        dct = _take("sweep", self.sweep, ("lambdas", "rhos", "perturb_layers", "pgd_steps", "baseline_cell"))
        lambdas = [float(v) for v in dct.get("lambdas", [0.5])]
        rhos = [float(v) for v in dct.get("rhos", [1.0])]
        check(len(lambdas) >= 1 and len(rhos) >= 1, "sweep grids must not be empty")
        base = self.awp_config() or awp.AwpConfig()
        overrides = {k: dct[k] for k in ("perturb_layers", "pgd_steps") if k in dct}
        cells = []
        for lam in lambdas:
            for rho in rhos:
                cells.append(base.copy(lam=lam, rho=rho, **overrides))
        baseline_cell = dct.get("baseline_cell")
        if baseline_cell is not None:
            baseline_cell = (float(baseline_cell[0]), float(baseline_cell[1]))
            check(
                baseline_cell[0] in lambdas and baseline_cell[1] in rhos,
                "sweep.baseline_cell {} is not in the grid".format(list(baseline_cell)),
            )
        return {"lambdas": lambdas, "rhos": rhos, "cells": cells, "baseline_cell": baseline_cell}

    # diagnostics
    def diagnose_options(self):
        dct = _take(
            "diagnose",
            self.diagnose,
            ("which", "variant", "params_path") + DIAGNOSTICS,
        )
        which = list(dct.get("which", ["landscape", "smoothness", "bound"]))
        for w in which:
            check(w in DIAGNOSTICS, "unknown diagnostic '{}'. Expected any of {}".format(w, DIAGNOSTICS))
        variant = dct.get("variant", "awp" if self.awp is not None else "baseline")
        check(variant in VARIANTS, "diagnose.variant must be one of {}".format(VARIANTS))
        params_path = dct.get("params_path")
        if params_path is not None:
            params_path = self._path(params_path)
            check(os.path.isfile(params_path), "file not found: {}".format(params_path))
        gradcheck = _take("diagnose.gradcheck", dct.get("gradcheck"), ("n_instances", "seed"))
        gapscale = _take("diagnose.gapscale", dct.get("gapscale"), ("rhos", "probe_eps", "seed"))
        return {
            "which": which,
            "variant": variant,
            "params_path": params_path,
            "landscape": analyst.LandscapeProbe.from_dict(dct.get("landscape")),
            "smoothness": analyst.SmoothnessConfig.from_dict(dct.get("smoothness")),
            "bound": analyst.BoundConfig.from_dict(dct.get("bound")),
            "gradcheck": {
                "n_instances": int(gradcheck.get("n_instances", 20)),
                "seed": int(gradcheck.get("seed", 0)),
            },
            "gapscale": {
                "rhos": [float(r) for r in gapscale.get("rhos", [0.0, 0.01, 0.02, 0.04])],
                "probe_eps": float(gapscale.get("probe_eps", 1e-5)),
                "seed": int(gapscale.get("seed", 0)),
            },
        }


def load_config(file_path, seed=None):
    """Load an experiment configuration file

    :param file_path: path to the JSON document
    :type file_path: str
    :param seed: base seed override
    :type seed: int
    :return: configuration
    :rtype: :class:`ExperimentConfig`
    """
    if not os.path.isfile(file_path):
        raise ConfigError("file not found: {}".format(file_path))
    with open(file_path, "r", encoding="utf-8") as f:
        try:
            dct = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("{}: invalid JSON ({})".format(file_path, e))
    if not isinstance(dct, dict):
        raise ConfigError("{}: expected a JSON object".format(file_path))
    if seed is not None:
        dct["seed"] = int(seed)
    cfg = ExperimentConfig()
    cfg.base_dir = os.path.dirname(os.path.abspath(file_path))
    cfg.set(dct)
    return cfg


# ------------------------------ TASKS ------------------------------
def _train_task(task):
    """One training run. Failures are recorded, not raised."""
    record = dict(task["coords"])
    try:
        _, report = awp.train(
            task["spec"], task["graph"], task["split"], task["train_cfg"], awp_cfg=task["awp_cfg"], name=task["name"]
        )
        record.update(
            status="ok",
            message="",
            test_acc=report.test_acc,
            best_val_acc=report.best_val_acc,
            best_epoch=report.best_epoch,
            wall_clock_s=report.wall_clock_s,
        )
    except (WtawpError, ValueError, ArithmeticError) as e:
        record.update(
            status="failed",
            message=str(e),
            test_acc=float("nan"),
            best_val_acc=float("nan"),
            best_epoch=-1,
            wall_clock_s=0.0,
        )
    return record


def _paired_task(task):
    graph = task["graph"]
    split = task["split"]
    row = dict(task["coords"])
    for variant in VARIANTS:
        params, report = awp.train(
            task["spec"], graph, split, task["train_cfg"], awp_cfg=task[variant], name=variant
        )
        row["{}_acc".format(variant)] = report.test_acc
        row["{}_smoothness".format(variant)] = analyst.input_gradient_smoothness(
            task["spec"], params, graph, split.train_ids, task["smoothness"]
        )
    row["delta"] = row["awp_acc"] - row["baseline_acc"]
    row["awp_smoother"] = bool(row["awp_smoothness"] < row["baseline_smoothness"])
    return row


def _attack_task(task):
    graph = task["graph"]
    split = task["split"]
    perturbed = task["perturbed"]
    rows = []
    for variant in task["variants"]:
        awp_cfg = task[variant]
        params, report = awp.train(task["spec"], graph, split, task["train_cfg"], awp_cfg=awp_cfg, name=variant)
        for protocol in task["protocols"]:
            row = dict(task["coords"], variant=variant, protocol=protocol, n_flips=perturbed.n_flips)
            if protocol == "evasion":
                res = attacks.evaluate_evasion(task["spec"], params, graph, perturbed.graph, split)
                row.update(clean_acc=res["clean_acc"], attacked_acc=res["attacked_acc"])
            else:
                res = attacks.evaluate_poisoning(
                    task["spec"], graph, perturbed.graph, split, task["train_cfg"], awp_cfg=awp_cfg
                )
                row.update(clean_acc=report.test_acc, attacked_acc=res["attacked_acc"])
            rows.append(row)
    return rows


def _start(toolname, cfg, outdir, talk, workplace=True):
    prompt = "{}@{}: [{}]".format("wtawp", cfg.name, toolname)
    if workplace:
        outdir = create_rundir(workplace=outdir, label=toolname, suffix="{}_{}".format(cfg.name, config_hash(cfg)))
    else:
        os.makedirs(outdir, exist_ok=True)
    logger = logger_setup(
        logger_name=toolname,
        streamhandler=talk,
        filehandler=True,
        logfile=os.path.join(outdir, "logs.log"),
    )
    logger.info("{} start".format(prompt))
    logger.info("{} run folder at {}".format(prompt, outdir))
    write_json(cfg.get_metadata(), os.path.join(outdir, "config.json"))
    return prompt, outdir, logger


def _end(logger, prompt, start_start):
    elapsed_time = time.time() - start_start
    logger.info("{} end".format(prompt))
    logger.info("{} total elapsed time: {} seconds".format(prompt, round(elapsed_time, 3)))
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
    return elapsed_time


# ------------------------------ TOOLS ------------------------------
def TRAIN(cfg, outdir, talk=False, workplace=True):
    """Train the configured variant on split 0 with initialization 0

    Writes ``train_report.csv``, ``params.json`` and ``summary.json``.

    :param cfg: experiment configuration
    :type cfg: :class:`ExperimentConfig`
    :param outdir: output folder
    :type outdir: str
    :param talk: log to the console
    :type talk: bool
    :param workplace: create a run directory inside ``outdir``
    :type workplace: bool
    :return: ``{"outdir", "summary"}``
    :rtype: dict
    """
    # ---------------------- START ----------------------
    start_start = time.time()
    toolname = TRAIN.__name__
    prompt, outdir, logger = _start(toolname, cfg, outdir, talk, workplace)

    # ---------------------- LOAD ----------------------
    s_step = "loading"
    logger.info("{} {} data ...".format(prompt, s_step))
    start_time = time.time()
    graph = cfg.load_graph()
    logger.info("{} {}".format(prompt, graph))
    split_seed, init_seed = cfg.seed_pairs()[0]
    split = core.make_split(graph, seed=split_seed)
    spec = cfg.model_spec(graph)
    variant = "awp" if cfg.awp is not None else "baseline"
    awp_cfg = cfg.variant_config(variant)
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- PROCESSING ----------------------
    s_step = "training"
    logger.info("{} {} {} ...".format(prompt, s_step, variant))
    start_time = time.time()
    params, report = awp.train(
        spec, graph, split, cfg.train_config(init_seed), awp_cfg=awp_cfg, logger=logger, name=variant
    )
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- EXPORTING ----------------------
    s_step = "exporting output"
    logger.info("{} {} data ...".format(prompt, s_step))
    report.to_csv(os.path.join(outdir, "train_report.csv"))
    params.to_json(os.path.join(outdir, "params.json"))
    summary = report.summary()
    summary.update(variant=variant, split_seed=split_seed, init_seed=init_seed)
    write_json(summary, os.path.join(outdir, "summary.json"))
    logger.info("{} test accuracy {:.4f} at epoch {}".format(prompt, report.test_acc, report.best_epoch))

    # ---------------------- END ----------------------
    _end(logger, prompt, start_start)
    return {"outdir": outdir, "summary": summary}


def aggregate_sweep(df_raw, baseline_cell=None):
    """Aggregate the raw sweep table per ``(lam, rho)`` cell

    Standard deviations are population (``ddof=0``). The p-value compares each
    cell with ``baseline_cell`` by Welch's test, NaN when not computable.

    :param df_raw: raw per-run table
    :type df_raw: :class:`pandas.DataFrame`
    :param baseline_cell: ``(lam, rho)`` of the baseline cell
    :type baseline_cell: tuple
    :return: one row per cell
    :rtype: :class:`pandas.DataFrame`
    """
    df_ok = df_raw[df_raw["status"] == "ok"]
    base = None
    if baseline_cell is not None:
        mask = (df_ok["lam"] == baseline_cell[0]) & (df_ok["rho"] == baseline_cell[1])
        base = df_ok.loc[mask, "test_acc"].values
    records = []
    for (lam, rho), df_cell in df_raw.groupby(["lam", "rho"], sort=True):
        accs = df_cell.loc[df_cell["status"] == "ok", "test_acc"].values
        p_value = float("nan")
        if base is not None and len(accs) > 0:
            try:
                p_value = analyst.welch_t_test(accs, base)["p_two_sided"]
            except ValueError:
                p_value = float("nan")
        records.append(
            {
                "lam": lam,
                "rho": rho,
                "n_runs": len(df_cell),
                "n_failed": int((df_cell["status"] != "ok").sum()),
                "mean": float(np.mean(accs)) if len(accs) else float("nan"),
                "std": float(np.std(accs)) if len(accs) else float("nan"),
                "p_value": p_value,
            }
        )
    return pd.DataFrame(records)


def sweep_table(df_agg):
    """Pivot the aggregates into rows ``lam``, columns ``rho``, cells ``mean ± std`` (percent)"""
    df = df_agg.copy()
    df["cell"] = ["{:.2f} ± {:.2f}".format(100 * m, 100 * s) for m, s in zip(df["mean"], df["std"])]
    table = df.pivot(index="lam", columns="rho", values="cell")
    table.columns = ["rho={:g}".format(c) for c in table.columns]
    return table.reset_index()


def SWEEP(cfg, outdir, jobs=1, talk=False, workplace=True):
    """Train every (lambda, rho) cell of the sweep grid over all splits and inits

    Completed runs are cached in ``cells/`` and skipped on re-runs.

    :param jobs: parallel worker processes
    :type jobs: int
    :return: ``{"outdir", "raw", "aggregate"}``
    :rtype: dict
    """
    # ---------------------- START ----------------------
    start_start = time.time()
    toolname = SWEEP.__name__
    prompt, outdir, logger = _start(toolname, cfg, outdir, talk, workplace)
    cells_dir = os.path.join(outdir, "cells")
    os.makedirs(cells_dir, exist_ok=True)

    # ---------------------- LOAD ----------------------
    s_step = "loading"
    logger.info("{} {} data ...".format(prompt, s_step))
    start_time = time.time()
    graph = cfg.load_graph()
    spec = cfg.model_spec(graph)
    opts = cfg.sweep_options()
    splits = {s: core.make_split(graph, seed=cfg.split_seed(s)) for s in range(int(cfg.splits))}
    tasks = []
    cached = []
    for cell in opts["cells"]:
        for s in range(int(cfg.splits)):
            for i in range(int(cfg.inits_per_split)):
                coords = {
                    "lam": float(cell.lam),
                    "rho": float(cell.rho),
                    "split_seed": cfg.split_seed(s),
                    "init_seed": cfg.init_seed(i),
                }
                key = "lam={lam:g}_rho={rho:g}_split={split_seed}_init={init_seed}.json".format(**coords)
                cell_file = os.path.join(cells_dir, key)
                if os.path.isfile(cell_file):
                    with open(cell_file, "r", encoding="utf-8") as f:
                        cached.append(json.load(f))
                    continue
                tasks.append(
                    {
                        "coords": coords,
                        "graph": graph,
                        "split": splits[s],
                        "spec": spec,
                        "train_cfg": cfg.train_config(cfg.init_seed(i)),
                        "awp_cfg": cell,
                        "name": key[:-5],
                        "cell_file": cell_file,
                    }
                )
    logger.info("{} {} runs to do, {} cached".format(prompt, len(tasks), len(cached)))
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- PROCESSING ----------------------
    s_step = "training"
    logger.info("{} {} cells with {} job(s) ...".format(prompt, s_step, jobs))
    start_time = time.time()
    records = _map(_train_task, tasks, jobs=jobs)
    for task, record in zip(tasks, records):
        if record["status"] == "ok":
            write_json(record, task["cell_file"])
        else:
            logger.warning("{} run {} failed: {}".format(prompt, task["name"], record["message"]))
    records = records + cached
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- EXPORTING ----------------------
    s_step = "exporting output"
    logger.info("{} {} data ...".format(prompt, s_step))
    raw_columns = ["lam", "rho", "split_seed", "init_seed", "status", "message", "test_acc", "best_val_acc", "best_epoch"]
    df_raw = pd.DataFrame(records)[raw_columns]
    df_raw = df_raw.sort_values(["lam", "rho", "split_seed", "init_seed"]).reset_index(drop=True)
    raw_file = os.path.join(outdir, "sweep_raw.csv")
    df_raw.to_csv(raw_file, index=False)
    df_agg = aggregate_sweep(df_raw, opts["baseline_cell"])
    df_agg.to_csv(os.path.join(outdir, "sweep_summary.csv"), index=False)
    sweep_table(df_agg).to_csv(os.path.join(outdir, "sweep_table.csv"), index=False)

    # verification pass against the written raw file
    df_check = aggregate_sweep(pd.read_csv(raw_file), opts["baseline_cell"])
    for col in ("mean", "std"):
        a = df_check[col].values
        b = df_agg[col].values
        ok = np.all((np.abs(a - b) <= 1e-12) | (np.isnan(a) & np.isnan(b)))
        if not ok:
            raise WtawpError("sweep aggregates do not match the raw table ({})".format(col))
    logger.info("{} aggregates verified against {}".format(prompt, raw_file))

    elapsed_time = _end(logger, prompt, start_start)
    write_json(
        {
            "n_runs": len(df_raw),
            "n_failed": int((df_raw["status"] != "ok").sum()),
            "wall_clock_s": elapsed_time,
            "run_wall_clock_s": float(sum(r.get("wall_clock_s", 0.0) for r in records)),
        },
        os.path.join(outdir, "summary.json"),
    )
    return {"outdir": outdir, "raw": df_raw, "aggregate": df_agg}


def PAIRED(cfg, outdir, jobs=1, talk=False, workplace=True):
    """Train baseline and variant with identical seeds for every (split, init) pair

    Writes ``paired.csv`` (one row per pair with accuracies, smoothness and the
    accuracy delta) and ``summary.json`` (means, wins and Welch's test).

    :return: ``{"outdir", "pairs", "summary"}``
    :rtype: dict
    """
    # ---------------------- START ----------------------
    start_start = time.time()
    toolname = PAIRED.__name__
    check(cfg.awp is not None, "paired needs an 'awp' section for the variant")
    prompt, outdir, logger = _start(toolname, cfg, outdir, talk, workplace)

    # ---------------------- LOAD ----------------------
    s_step = "loading"
    logger.info("{} {} data ...".format(prompt, s_step))
    start_time = time.time()
    graph = cfg.load_graph()
    spec = cfg.model_spec(graph)
    smoothness = cfg.diagnose_options()["smoothness"]
    tasks = []
    for split_seed, init_seed in cfg.seed_pairs():
        tasks.append(
            {
                "coords": {"split_seed": split_seed, "init_seed": init_seed},
                "graph": graph,
                "split": core.make_split(graph, seed=split_seed),
                "spec": spec,
                "train_cfg": cfg.train_config(init_seed),
                "baseline": cfg.baseline_config(),
                "awp": cfg.awp_config(),
                "smoothness": smoothness,
            }
        )
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- PROCESSING ----------------------
    s_step = "training pairs"
    logger.info("{} {} ({}) ...".format(prompt, s_step, len(tasks)))
    start_time = time.time()
    rows = _map(_paired_task, tasks, jobs=jobs)
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- EXPORTING ----------------------
    df = pd.DataFrame(rows)
    df.to_csv(os.path.join(outdir, "paired.csv"), index=False)
    summary = {
        "n_pairs": len(df),
        "baseline_mean_acc": float(df["baseline_acc"].mean()),
        "awp_mean_acc": float(df["awp_acc"].mean()),
        "mean_delta": float(df["delta"].mean()),
        "awp_wins": int((df["delta"] > 0).sum()),
        "awp_smoother_pairs": int(df["awp_smoother"].sum()),
    }
    if np.all(df["delta"].values == 0):
        summary.update(t=0.0, p_two_sided=1.0, note="all deltas are zero")
    else:
        try:
            summary.update(analyst.welch_t_test(df["awp_acc"].values, df["baseline_acc"].values))
        except ValueError as e:
            summary.update(t=float("nan"), p_two_sided=float("nan"), note=str(e))
    write_json(summary, os.path.join(outdir, "summary.json"))
    logger.info(
        "{} mean delta {:+.4f}, wins {}/{}, smoother {}/{}".format(
            prompt, summary["mean_delta"], summary["awp_wins"], len(df), summary["awp_smoother_pairs"], len(df)
        )
    )
    _end(logger, prompt, start_start)
    return {"outdir": outdir, "pairs": df, "summary": summary}


def gradcheck_table(n_instances=20, seed=0):
    """Finite-difference gradient check over random small instances of every model kind

    :return: one row per model kind
    :rtype: :class:`pandas.DataFrame`
    """
    records = []
    for k_kind, kind in enumerate(nn.MODEL_KINDS):
        dfs = []
        for k in range(int(n_instances)):
            inst_seed = nn.derive_seed(seed, k_kind, k)
            rng = np.random.default_rng(inst_seed)
            spec, params, adj, features, labels, node_set = nn.random_problem(
                kind,
                seed=inst_seed,
                n_nodes=int(rng.integers(4, 9)),
                n_features=int(rng.integers(2, 6)),
                hidden_dim=int(rng.integers(2, 6)),
                n_classes=int(rng.integers(2, 6)),
            )
            dfs.append(nn.check_gradients(spec, params, adj, features, labels, node_set))
        df = pd.concat(dfs, ignore_index=True)
        significant = df[~(df["abs_error"] < 1e-8)]
        records.append(
            {
                "kind": kind,
                "n_instances": int(n_instances),
                "n_entries": len(df),
                "max_rel_error": float(significant["rel_error"].max()) if len(significant) else 0.0,
                "max_abs_error": float(df["abs_error"].max()),
                "all_passed": bool(df["passed"].all()),
            }
        )
    return pd.DataFrame(records)


def gapscale_table(kind, awp_cfg, rhos, probe_eps=1e-5, seed=0):
    """Exact versus first-order gradient gap per ``rho`` on a small random instance

    ``ratio_to_half`` is ``gap(rho) / gap(rho / 2)`` when ``rho / 2`` is in the list.

    :return: one row per rho
    :rtype: :class:`pandas.DataFrame`
    """
    spec, params, adj, features, labels, node_set = nn.random_problem(kind, seed=seed)
    gaps = {}
    for rho in rhos:
        cfg = awp_cfg.copy(rho=rho)
        res = awp.exact_vs_approx_gradient_gap(
            spec, params, adj, features, labels, node_set, cfg, probe_eps=probe_eps
        )
        gaps[rho] = res["gap_norm"]
    records = []
    for rho in rhos:
        half = rho / 2
        ratio = gaps[rho] / gaps[half] if (rho > 0 and half in gaps and gaps[half] > 0) else float("nan")
        records.append({"rho": rho, "gap_norm": gaps[rho], "ratio_to_half": ratio})
    return pd.DataFrame(records)


def DIAGNOSE(cfg, outdir, which=None, talk=False, workplace=True):
    """Run diagnostics on one model (trained inline or loaded from ``params_path``)

    :param which: diagnostics to run. If None, ``diagnose.which`` from the config
    :type which: list
    :return: ``{"outdir", "summary"}`` plus one table per diagnostic
    :rtype: dict
    """
    # ---------------------- START ----------------------
    start_start = time.time()
    toolname = DIAGNOSE.__name__
    prompt, outdir, logger = _start(toolname, cfg, outdir, talk, workplace)
    opts = cfg.diagnose_options()
    if which is None:
        which = opts["which"]
    for w in which:
        check(w in DIAGNOSTICS, "unknown diagnostic '{}'. Expected any of {}".format(w, DIAGNOSTICS))
    result = {"outdir": outdir}
    summary = {"which": list(which), "variant": opts["variant"]}

    # ---------------------- MODEL ----------------------
    needs_model = any(w in ("landscape", "smoothness", "bound") for w in which)
    if needs_model:
        s_step = "model"
        logger.info("{} {} ...".format(prompt, s_step))
        start_time = time.time()
        graph = cfg.load_graph()
        split_seed, init_seed = cfg.seed_pairs()[0]
        split = core.make_split(graph, seed=split_seed)
        spec = cfg.model_spec(graph)
        if opts["params_path"] is not None:
            params = nn.ModelParams.from_json(opts["params_path"])
            logger.info("{} parameters loaded from {}".format(prompt, opts["params_path"]))
        else:
            params, report = awp.train(
                spec, graph, split, cfg.train_config(init_seed),
                awp_cfg=cfg.variant_config(opts["variant"]), logger=logger, name=opts["variant"],
            )
            summary["test_acc"] = report.test_acc
        adj = core.normalize_adjacency(graph)
        summary["train_loss"] = nn.loss_at(spec, params, adj, graph.features, graph.labels, split.train_ids)
        _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- DIAGNOSTICS ----------------------
    for w in which:
        s_step = w
        logger.info("{} {} ...".format(prompt, s_step))
        start_time = time.time()
        if w == "landscape":
            df = analyst.landscape_slice(spec, params, graph, opts["landscape"], node_set=split.train_ids)
        elif w == "smoothness":
            records = []
            for target in analyst.SMOOTHNESS_TARGETS:
                smooth_cfg = opts["smoothness"].copy(target=target)
                records.append(
                    {
                        "model_id": opts["variant"],
                        "target": target,
                        "mean_grad_norm": analyst.input_gradient_smoothness(
                            spec, params, graph, split.train_ids, smooth_cfg
                        ),
                    }
                )
            df = pd.DataFrame(records)
        elif w == "bound":
            df = analyst.bound_terms(spec, params, split, graph, opts["bound"]).to_dataframe()
        elif w == "gradcheck":
            df = gradcheck_table(**opts["gradcheck"])
            summary["gradcheck_max_rel_error"] = float(df["max_rel_error"].max())
        else:
            kind, _ = cfg.model_options()
            base_cfg = cfg.awp_config() or awp.AwpConfig.t_awp(rho=0.0)
            df = gapscale_table(kind, base_cfg, **opts["gapscale"])
        df.to_csv(os.path.join(outdir, "{}.csv".format(w)), index=False)
        result[w] = df
        _log_elapsed(logger, prompt, s_step, start_time)

    write_json(summary, os.path.join(outdir, "summary.json"))
    _end(logger, prompt, start_start)
    result["summary"] = summary
    return result


def ATTACK(cfg, outdir, jobs=1, talk=False, workplace=True):
    """Robustness of the baseline and the variant under the configured attack

    Every (split, init) pair gets its own attacked graph, shared by both
    variants. Writes ``attack_runs.csv``, ``attack_summary.csv`` and the flip
    lists under ``flips/``.

    :return: ``{"outdir", "runs", "aggregate"}``
    :rtype: dict
    """
    # ---------------------- START ----------------------
    start_start = time.time()
    toolname = ATTACK.__name__
    check(cfg.attack is not None, "attack needs an 'attack' section")
    prompt, outdir, logger = _start(toolname, cfg, outdir, talk, workplace)
    flips_dir = os.path.join(outdir, "flips")
    os.makedirs(flips_dir, exist_ok=True)

    # ---------------------- ATTACKING ----------------------
    s_step = "attacking"
    logger.info("{} {} graphs ...".format(prompt, s_step))
    start_time = time.time()
    graph = cfg.load_graph()
    spec = cfg.model_spec(graph)
    variants = ["baseline"] + (["awp"] if cfg.awp is not None else [])
    tasks = []
    for k, (split_seed, init_seed) in enumerate(cfg.seed_pairs()):
        attack_spec = cfg.attack_spec(seed_offset=k)
        perturbed = attacks.run_attack(graph, attack_spec)
        perturbed.to_json(os.path.join(flips_dir, "split={}_init={}.json".format(split_seed, init_seed)))
        tasks.append(
            {
                "coords": {"split_seed": split_seed, "init_seed": init_seed},
                "graph": graph,
                "perturbed": perturbed,
                "split": core.make_split(graph, seed=split_seed),
                "spec": spec,
                "train_cfg": cfg.train_config(init_seed),
                "variants": variants,
                "protocols": cfg.attack_protocols(),
                "baseline": cfg.baseline_config(),
                "awp": cfg.awp_config(),
            }
        )
    logger.info("{} {} flips per graph".format(prompt, tasks[0]["perturbed"].n_flips))
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- PROCESSING ----------------------
    s_step = "training"
    logger.info("{} {} ...".format(prompt, s_step))
    start_time = time.time()
    rows = [row for rows in _map(_attack_task, tasks, jobs=jobs) for row in rows]
    _log_elapsed(logger, prompt, s_step, start_time)

    # ---------------------- EXPORTING ----------------------
    df = pd.DataFrame(rows)
    df.to_csv(os.path.join(outdir, "attack_runs.csv"), index=False)
    df_agg = (
        df.groupby(["variant", "protocol"], sort=True)
        .agg(
            n_runs=("attacked_acc", "size"),
            clean_mean=("clean_acc", "mean"),
            clean_std=("clean_acc", lambda v: float(np.std(v))),
            attacked_mean=("attacked_acc", "mean"),
            attacked_std=("attacked_acc", lambda v: float(np.std(v))),
        )
        .reset_index()
    )
    df_agg.to_csv(os.path.join(outdir, "attack_summary.csv"), index=False)
    for _, r in df_agg.iterrows():
        logger.info(
            "{} {} {}: clean {:.4f} attacked {:.4f}".format(
                prompt, r["variant"], r["protocol"], r["clean_mean"], r["attacked_mean"]
            )
        )
    elapsed_time = _end(logger, prompt, start_start)
    write_json({"n_runs": len(df), "wall_clock_s": elapsed_time}, os.path.join(outdir, "summary.json"))
    return {"outdir": outdir, "runs": df, "aggregate": df_agg}


def GENTOY(cfg, outdir, talk=False, workplace=True):
    """Write the configured dataset to the JSON graph format (``graph.json``)

    :return: ``{"outdir", "file"}``
    :rtype: dict
    """
    start_start = time.time()
    toolname = GENTOY.__name__
    prompt, outdir, logger = _start(toolname, cfg, outdir, talk, workplace)
    graph = cfg.load_graph()
    graph.validate()
    file_path = graph.to_json(os.path.join(outdir, "graph.json"))
    logger.info("{} {} written to {}".format(prompt, graph, file_path))
    _end(logger, prompt, start_start)
    return {"outdir": outdir, "file": file_path}
