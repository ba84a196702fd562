"""
Adversarial weight perturbation

Description:
    The ``awp`` module provides the weight perturbation machinery, the weighted
    and truncated objectives (AWP, T-AWP, W-AWP and WT-AWP), the full-batch
    training loop with validation-based model selection and the exact versus
    first-order gradient comparison.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

The training objective is

.. math::

    \\lambda L(\\theta + [\\hat\\delta, 0]) + (1 - \\lambda) L(\\theta)

where ``delta`` is the projected training-loss gradient restricted to the
perturbed layers, with per-layer radius ``rho * ||W_i||``. Its gradient uses
the first-order approximation (the loss gradient taken at the perturbed point).

- ``lam = 0`` or ``rho = 0``: vanilla training.
- ``lam = 1``, all layers: AWP. ``lam = 1``, some layers: T-AWP.
- ``0 < lam < 1``, all layers: W-AWP. Some layers: WT-AWP.

Example
-------

.. code-block:: python

    from wtawp import awp, nn
    from wtawp.datasets import core, toys

    graph = toys.generate_linear_toy()
    split = core.make_split(graph, seed=0)
    spec = nn.ModelSpec.build("GCN2", graph.n_features, graph.n_classes, hidden_dim=64)
    params, report = awp.train(
        spec, graph, split, awp.TrainConfig(seed=0), awp.AwpConfig.wt_awp(rho=2.5, lam=0.5)
    )
    print(report.summary())

"""
import time
import json
import numpy as np
import pandas as pd

from wtawp import nn
from wtawp.root import Options, check, TrainingError
from wtawp.datasets.core import normalize_adjacency

PROJECTIONS = ("ball", "sphere")
LAYER_SELECTIONS = ("first", "last", "all")
# guards the sphere rescale against zero directions
NORM_EPS = 1e-20


# ------------------------------ OPTIONS ------------------------------
class AwpConfig(Options):
    """
    Weight perturbation options.

    - ``rho``: perturbation strength (radius ``rho * ||W_i||`` per layer).
    - ``lam``: weight of the perturbed loss (``lambda`` is accepted as a key).
    - ``pgd_steps``, ``pgd_lr``: ascent steps and step size (multi-step only).
    - ``perturb_layers``: ``first``, ``last``, ``all`` or a list of booleans.
      None keeps the mask carried by the parameters (first layer by default).
    - ``projection``: ``ball`` (default) only shrinks directions longer than
      the radius, ``sphere`` places every nonzero direction on the radius.

    """

    fields = ("rho", "lam", "pgd_steps", "pgd_lr", "perturb_layers", "projection")
    aliases = {"lambda": "lam"}

    def __init__(self, rho=0.0, lam=0.0, pgd_steps=1, pgd_lr=0.2, perturb_layers=None, projection="ball"):
        super().__init__()
        self.rho = rho
        self.lam = lam
        self.pgd_steps = pgd_steps
        self.pgd_lr = pgd_lr
        self.perturb_layers = perturb_layers
        self.projection = projection
        self.validate()

    def validate(self):
        check(float(self.rho) >= 0, "rho must be >= 0, got {}".format(self.rho))
        check(0 <= float(self.lam) <= 1, "lambda must be in [0, 1], got {}".format(self.lam))
        check(int(self.pgd_steps) >= 1, "pgd_steps must be >= 1")
        check(float(self.pgd_lr) > 0, "pgd_lr must be > 0")
        check(self.projection in PROJECTIONS, "projection must be one of {}".format(PROJECTIONS))
        if isinstance(self.perturb_layers, str):
            check(
                self.perturb_layers in LAYER_SELECTIONS,
                "perturb_layers must be one of {} or a list of booleans".format(LAYER_SELECTIONS),
            )
        elif self.perturb_layers is not None:
            self.perturb_layers = [bool(b) for b in self.perturb_layers]
        return None

    @property
    def is_vanilla(self):
        return float(self.lam) == 0 or float(self.rho) == 0

    def layer_mask(self, n_layers, default=None):
        """Resolve ``perturb_layers`` for a model with ``n_layers`` layers

        :param default: mask used when ``perturb_layers`` is None
        :type default: list
        :return: one boolean per layer
        :rtype: list
        """
        sel = self.perturb_layers
        if sel is None:
            if default is not None:
                return list(default)
            sel = "first"
        if sel == "first":
            return [True] + [False] * (n_layers - 1)
        if sel == "last":
            return [False] * (n_layers - 1) + [True]
        if sel == "all":
            return [True] * n_layers
        check(
            len(sel) == n_layers,
            "perturb_layers has {} entries for {} layers".format(len(sel), n_layers),
        )
        return list(sel)

    # presets
    @classmethod
    def vanilla(cls):
        return cls(rho=0.0, lam=0.0)

    @classmethod
    def awp(cls, rho, **kwargs):
        return cls(rho=rho, lam=1.0, perturb_layers="all", **kwargs)

    @classmethod
    def t_awp(cls, rho, perturb_layers="first", **kwargs):
        return cls(rho=rho, lam=1.0, perturb_layers=perturb_layers, **kwargs)

    @classmethod
    def w_awp(cls, rho, lam, **kwargs):
        return cls(rho=rho, lam=lam, perturb_layers="all", **kwargs)

    @classmethod
    def wt_awp(cls, rho, lam, perturb_layers="first", **kwargs):
        return cls(rho=rho, lam=lam, perturb_layers=perturb_layers, **kwargs)


class TrainConfig(Options):
    """
    Training options (Adam, full batch, no schedule, no early stopping).

    ``hidden_dim`` and ``dropout`` size the model built by :func:`build_model_spec`.

    """

    fields = ("epochs", "lr", "weight_decay", "hidden_dim", "dropout", "seed")

    def __init__(self, epochs=200, lr=0.01, weight_decay=5e-4, hidden_dim=64, dropout=0.5, seed=0):
        super().__init__()
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.seed = seed
        self.validate()

    def validate(self):
        check(int(self.epochs) >= 1, "epochs must be >= 1")
        check(float(self.lr) > 0, "lr must be > 0")
        check(float(self.weight_decay) >= 0, "weight_decay must be >= 0")
        check(int(self.hidden_dim) >= 1, "hidden_dim must be >= 1")
        check(0 <= float(self.dropout) < 1, "dropout must be in [0, 1)")
        return None


def build_model_spec(kind, graph, train_cfg, **kwargs):
    """Get the model spec sized for a graph and a training config

    :param kind: model kind
    :type kind: str
    :param graph: dataset
    :type graph: :class:`wtawp.datasets.core.Graph`
    :param train_cfg: training options
    :type train_cfg: :class:`TrainConfig`
    :return: model spec
    :rtype: :class:`wtawp.nn.ModelSpec`
    """
    return nn.ModelSpec.build(
        kind,
        n_features=graph.n_features,
        n_classes=graph.n_classes,
        hidden_dim=int(train_cfg.hidden_dim),
        dropout_rate=float(train_cfg.dropout),
        **kwargs,
    )


# ------------------------------ PERTURBATION ------------------------------
def layer_radii(params, rho, mask=None):
    """Per-layer radius ``rho * ||W_i||`` (entrywise 2-norm), zero for unperturbed layers

    :param params: model parameters
    :type params: :class:`wtawp.nn.ModelParams`
    :param rho: perturbation strength
    :type rho: float
    :param mask: perturbed layers. If None, ``params.awp_mask``
    :type mask: list
    :return: radii
    :rtype: :class:`numpy.ndarray`
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if mask is None:
        mask = params.awp_mask
    return float(rho) * params.layer_norms() * np.asarray(mask, dtype=np.float64)


def project_to_ball(delta, radii):
    """Project every layer onto its 2-norm ball

    Layers longer than their radius are scaled onto it, the others are kept.
    Layers with zero radius become exactly zero.

    :param delta: perturbation
    :type delta: :class:`wtawp.nn.GradientSet`
    :param radii: per-layer radius
    :type radii: :class:`numpy.ndarray`
    :return: projected perturbation
    :rtype: :class:`wtawp.nn.GradientSet`
    """
    if len(radii) != len(delta):
        raise ValueError("got {} radii for {} layers".format(len(radii), len(delta)))
    layers = []
    for d, r in zip(delta.layers, radii):
        norm = np.linalg.norm(d.ravel())
        if r <= 0:
            layers.append(np.zeros_like(d))
        elif norm > r:
            layers.append(d * (r / norm))
        else:
            layers.append(d.copy())
    return nn.GradientSet(layers)


def project_to_sphere(delta, radii):
    """Rescale every nonzero layer to its radius. Zero layers stay zero.

    :return: perturbation with ``||delta_i|| = r_i`` wherever ``delta_i != 0``
    :rtype: :class:`wtawp.nn.GradientSet`
    """
    if len(radii) != len(delta):
        raise ValueError("got {} radii for {} layers".format(len(radii), len(delta)))
    layers = []
    for d, r in zip(delta.layers, radii):
        norm = np.linalg.norm(d.ravel())
        if r <= 0 or norm == 0:
            layers.append(np.zeros_like(d))
        else:
            layers.append(d * (r / (norm + NORM_EPS)))
    return nn.GradientSet(layers)


def project(delta, radii, projection="ball"):
    if projection == "ball":
        return project_to_ball(delta, radii)
    return project_to_sphere(delta, radii)


def _masked(grads, mask):
    return nn.GradientSet([g if m else np.zeros_like(g) for g, m in zip(grads.layers, mask)])


def compute_perturbation(spec, params, adj, features, labels, node_set, cfg, dropout_seed=None, grads=None):
    """Compute the approximate worst-case weight perturbation

    One step: the projected training-loss gradient. Several steps: gradient
    ascent ``delta <- delta + pgd_lr * grad L(theta + delta)`` projected once
    after the last step. Unperturbed layers are exactly zero.

    :param cfg: perturbation options
    :type cfg: :class:`AwpConfig`
    :param dropout_seed: dropout seed of the gradient evaluations
    :type dropout_seed: int
    :param grads: gradient at ``params`` with the same seed, when already available
    :type grads: :class:`wtawp.nn.GradientSet`
    :return: perturbation
    :rtype: :class:`wtawp.nn.GradientSet`
    """
    mask = cfg.layer_mask(len(params), default=params.awp_mask)
    radii = layer_radii(params, cfg.rho, mask=mask)
    if grads is None:
        _, grads = nn.loss_and_grad(spec, params, adj, features, labels, node_set, dropout_seed=dropout_seed)
    direction = _masked(grads, mask)
    steps = int(cfg.pgd_steps)
    if steps > 1:
        delta = direction.scale(float(cfg.pgd_lr))
        for step in range(1, steps):
            _, g = nn.loss_and_grad(
                spec,
                params.add(delta),
                adj,
                features,
                labels,
                node_set,
                dropout_seed=nn.derive_seed(dropout_seed, step),
            )
            delta = delta.add(_masked(g, mask), coeff=float(cfg.pgd_lr))
        direction = delta
    return project(direction, radii, cfg.projection)


def wtawp_loss_and_grad(spec, params, adj, features, labels, node_set, cfg, dropout_seeds=(None, None)):
    """Weighted truncated AWP loss and its first-order gradient

    ``loss = lam * L(theta + delta) + (1 - lam) * L(theta)`` and
    ``grad = lam * grad L|theta+delta + (1 - lam) * grad L|theta``.
    With ``lam = 0`` or ``rho = 0`` the vanilla loss and gradient are returned.

    :param cfg: perturbation options. None means vanilla
    :type cfg: :class:`AwpConfig`
    :param dropout_seeds: dropout seeds of the clean and the perturbed evaluations
    :type dropout_seeds: tuple
    :return: loss, gradients and ``{"base_loss", "perturbed_loss"}``
    :rtype: tuple
    """
    seed_base, seed_perturbed = dropout_seeds
    base_loss, base_grads = nn.loss_and_grad(
        spec, params, adj, features, labels, node_set, dropout_seed=seed_base
    )
    if cfg is None or cfg.is_vanilla:
        return base_loss, base_grads, {"base_loss": base_loss, "perturbed_loss": base_loss}
    lam = float(cfg.lam)
    delta = compute_perturbation(
        spec, params, adj, features, labels, node_set, cfg, dropout_seed=seed_base, grads=base_grads
    )
    perturbed_loss, perturbed_grads = nn.loss_and_grad(
        spec, params.add(delta), adj, features, labels, node_set, dropout_seed=seed_perturbed
    )
    loss = lam * perturbed_loss + (1.0 - lam) * base_loss
    grads = perturbed_grads.scale(lam).add(base_grads, coeff=1.0 - lam)
    return loss, grads, {"base_loss": base_loss, "perturbed_loss": perturbed_loss}


def perturbed_objective(fun, grad, theta, radius, projection="ball"):
    """Composite map ``theta -> f(theta + P(grad f(theta)))`` over flat vectors

    :param fun: objective
    :type fun: callable
    :param grad: gradient of the objective
    :type grad: callable
    :param theta: point
    :type theta: :class:`numpy.ndarray`
    :param radius: projection radius (``numpy.inf`` disables the projection)
    :type radius: float
    :param projection: ``ball`` or ``sphere``
    :type projection: str
    :return: composite value
    :rtype: float
    """
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(grad(theta), dtype=np.float64)
    norm = np.linalg.norm(g)
    if projection == "sphere":
        delta = g * (radius / (norm + NORM_EPS)) if norm > 0 else np.zeros_like(g)
    elif norm > radius:
        delta = g * (radius / norm)
    else:
        delta = g
    return float(fun(theta + delta))


def exact_vs_approx_gradient_gap(
    spec, params, adj, features, labels, node_set, cfg, probe_eps=1e-5, max_entries=5000
):
    """Compare the exact gradient of ``theta -> L(theta + delta(theta))`` with
    its first-order approximation ``grad L|theta+delta``

    The exact gradient is taken by central finite differences over every
    weight entry, so it includes the derivative of the perturbation itself.
    Dropout is off.

    :param probe_eps: finite-difference step
    :type probe_eps: float
    :param max_entries: largest parameter count accepted
    :type max_entries: int
    :return: ``{"exact_grad", "approx_grad", "gap_norm"}`` (gradients as flat vectors)
    :rtype: dict
    """
    n_params = params.n_parameters
    if n_params > max_entries:
        raise ValueError(
            "{} weight entries exceed the finite-difference cap of {}".format(n_params, max_entries)
        )

    def composite(p):
        delta = compute_perturbation(spec, p, adj, features, labels, node_set, cfg)
        return nn.loss_at(spec, p.add(delta), adj, features, labels, node_set)

    delta = compute_perturbation(spec, params, adj, features, labels, node_set, cfg)
    _, approx = nn.loss_and_grad(spec, params.add(delta), adj, features, labels, node_set)
    approx_flat = approx.flatten()

    theta = params.flatten()
    exact_flat = np.zeros(n_params)
    for k in range(n_params):
        step = np.zeros(n_params)
        step[k] = probe_eps
        f_plus = composite(params.from_flat(theta + step))
        f_minus = composite(params.from_flat(theta - step))
        exact_flat[k] = (f_plus - f_minus) / (2.0 * probe_eps)
    return {
        "exact_grad": exact_flat,
        "approx_grad": approx_flat,
        "gap_norm": float(np.linalg.norm(exact_flat - approx_flat)),
    }


# ------------------------------ TRAINING ------------------------------
class TrainReport:
    """
    Per-epoch training record and the selected-model results.

    """

    columns = ("epoch", "train_loss", "awp_loss", "rel_grad_norm", "val_acc", "gen_gap")

    def __init__(self, name="MyRun"):
        self.name = name
        self.series = {c: [] for c in self.columns}
        self.best_epoch = -1
        self.best_val_acc = float("nan")
        self.test_acc = float("nan")
        self.wall_clock_s = 0.0

    def __len__(self):
        return len(self.series["epoch"])

    def __getitem__(self, column):
        return np.asarray(self.series[column])

    def record(self, **values):
        for c in self.columns:
            self.series[c].append(values[c])

    def to_dataframe(self):
        """Get the per-epoch table

        :return: one row per epoch
        :rtype: :class:`pandas.DataFrame`
        """
        return pd.DataFrame({c: self.series[c] for c in self.columns})

    def to_csv(self, file_path):
        self.to_dataframe().to_csv(file_path, index=False)
        return file_path

    def summary(self):
        """Get the final results

        :return: summary dictionary
        :rtype: dict
        """
        return {
            "name": self.name,
            "epochs": len(self),
            "best_epoch": int(self.best_epoch),
            "best_val_acc": float(self.best_val_acc),
            "test_acc": float(self.test_acc),
            "final_train_loss": float(self.series["train_loss"][-1]) if len(self) else float("nan"),
            "wall_clock_s": float(self.wall_clock_s),
        }

    def to_json(self, file_path, extra=None):
        dct = self.summary()
        if extra:
            dct.update(extra)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(dct, f, indent=2)
        return file_path


def train(spec, graph, split, train_cfg, awp_cfg=None, logger=None, log_every=20, name="MyRun"):
    """Train a model with Adam on the (weighted truncated) AWP objective

    The model of the epoch with the highest validation accuracy is returned
    (earliest on ties). Every epoch evaluates the updated parameters.

    :param spec: model spec
    :type spec: :class:`wtawp.nn.ModelSpec`
    :param graph: dataset
    :type graph: :class:`wtawp.datasets.core.Graph`
    :param split: node split
    :type split: :class:`wtawp.datasets.core.Split`
    :param train_cfg: training options, ``seed`` drives initialization and dropout
    :type train_cfg: :class:`TrainConfig`
    :param awp_cfg: perturbation options. None means vanilla training
    :type awp_cfg: :class:`AwpConfig`
    :param logger: optional logger
    :type logger: :class:`logging.Logger`
    :param log_every: epochs between log lines
    :type log_every: int
    :return: selected parameters and the training report
    :rtype: tuple
    """
    t0 = time.time()
    adj = normalize_adjacency(graph)
    features = graph.features
    labels = graph.labels
    all_ids = np.arange(graph.n_nodes)
    seed = int(train_cfg.seed)

    n_layers = spec.n_layers
    if awp_cfg is None:
        mask = [True] + [False] * (n_layers - 1)
    else:
        mask = awp_cfg.layer_mask(n_layers)
    params = nn.init_params(spec, seed=seed, awp_mask=mask)
    state = nn.AdamState()

    report = TrainReport(name=name)
    best_params = params.copy()
    best_val = -1.0
    best_logits = None
    for epoch in range(int(train_cfg.epochs)):
        seeds = (nn.derive_seed(seed, epoch, 0), nn.derive_seed(seed, epoch, 1))
        loss, grads, parts = wtawp_loss_and_grad(
            spec, params, adj, features, labels, split.train_ids, awp_cfg, dropout_seeds=seeds
        )
        grad_norm = grads.norm()
        if not (np.isfinite(loss) and np.isfinite(grad_norm)):
            raise TrainingError(epoch, "non-finite loss ({}) or gradient norm ({})".format(loss, grad_norm))
        param_norm = params.norm()
        rel_grad_norm = grad_norm / param_norm if param_norm > 0 else float("inf")

        params, state = nn.adam_step(
            state, params, grads, lr=float(train_cfg.lr), weight_decay=float(train_cfg.weight_decay)
        )

        logits = nn.predict(spec, params, adj, features)
        val_acc = nn.accuracy(logits, labels, split.val_ids)
        eval_train_loss = nn.mean_cross_entropy(logits, labels, split.train_ids)
        eval_all_loss = nn.mean_cross_entropy(logits, labels, all_ids)
        report.record(
            epoch=epoch,
            train_loss=parts["base_loss"],
            awp_loss=parts["perturbed_loss"],
            rel_grad_norm=rel_grad_norm,
            val_acc=val_acc,
            gen_gap=eval_all_loss - eval_train_loss,
        )
        if val_acc > best_val:
            best_val = val_acc
            best_params = params.copy()
            best_logits = logits
            report.best_epoch = epoch
        if logger is not None and (epoch % log_every == 0 or epoch == int(train_cfg.epochs) - 1):
            logger.info(
                "{} epoch {:4d}  loss {:.4f}  awp {:.4f}  |g|/|w| {:.3e}  val {:.4f}".format(
                    name, epoch, parts["base_loss"], parts["perturbed_loss"], rel_grad_norm, val_acc
                )
            )
    report.best_val_acc = best_val
    report.test_acc = nn.accuracy(best_logits, labels, split.test_ids)
    report.wall_clock_s = time.time() - t0
    return best_params, report
