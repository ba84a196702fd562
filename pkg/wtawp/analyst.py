"""
Flatness and generalization diagnostics

Description:
    The ``analyst`` module provides the diagnostics used to compare trained
    models: loss landscapes along random directions, input-gradient smoothness,
    the generalization gap with a sampled sharpness estimate, the computable
    terms of the AWP generalization bound and Welch's t-test.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

All diagnostics run the models in evaluation mode (no dropout) and are
deterministic given their ``seed``. Tabular outputs are
:class:`pandas.DataFrame` objects ready for ``to_csv``.

>>> from wtawp import analyst
>>> df = analyst.landscape_slice(spec, params, graph, analyst.LandscapeProbe(), node_set=split.train_ids)
>>> df[["alpha", "mean_offset"]]

The bound report evaluates

.. math::

    \\left(\\frac{m^2}{d} e^{1 - m^2/d}\\right)^{d/2}, \\quad
    \\frac{1}{2\\sqrt{N_0}}\\left[1 + d \\log\\left(1 + \\frac{m^2 \\|\\theta\\|^2}{d \\rho^2}\\right)\\right], \\quad
    \\frac{\\ln(3/\\delta) + 1/4}{\\sqrt{N_0}}

The ``Theta(K * eps_all)`` constant has no computable definition and is
reported as omitted.

"""
import numpy as np
import pandas as pd

from wtawp import nn
from wtawp.root import Options, ConfigError, check
from wtawp.datasets.core import normalize_adjacency

SMOOTHNESS_TARGETS = ("features", "normalized_adjacency")


# ------------------------------ OPTIONS ------------------------------
class LandscapeProbe(Options):
    """
    Options of the 1-D loss landscape slices.

    """

    fields = ("alphas", "n_directions", "seed")

    def __init__(self, alphas=(-0.5, -0.25, 0.0, 0.25, 0.5), n_directions=10, seed=0):
        super().__init__()
        self.alphas = alphas
        self.n_directions = n_directions
        self.seed = seed
        self.validate()

    def validate(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        check(len(self.alphas) >= 1, "alphas must not be empty")
        check(all(np.isfinite(self.alphas)), "alphas must be finite")
        check(int(self.n_directions) >= 1, "n_directions must be >= 1")
        return None


class SmoothnessConfig(Options):
    """
    Options of the input-gradient smoothness diagnostic.

    """

    fields = ("noise_std", "n_samples", "target", "seed")

    def __init__(self, noise_std=0.0005, n_samples=100, target="features", seed=0):
        super().__init__()
        self.noise_std = noise_std
        self.n_samples = n_samples
        self.target = target
        self.seed = seed
        self.validate()

    def validate(self):
        check(float(self.noise_std) >= 0, "noise_std must be >= 0")
        check(int(self.n_samples) >= 1, "n_samples must be >= 1")
        check(self.target in SMOOTHNESS_TARGETS, "target must be one of {}".format(SMOOTHNESS_TARGETS))
        return None


class BoundConfig(Options):
    """
    Options of the bound-term evaluator.

    ``m`` defaults to ``sqrt(d)`` when None. ``n_samples`` and ``seed`` drive
    the sharpness sampler.

    """

    fields = ("m", "confidence_delta", "rho", "n_samples", "seed")

    def __init__(self, m=None, confidence_delta=0.05, rho=0.5, n_samples=20, seed=0):
        super().__init__()
        self.m = m
        self.confidence_delta = confidence_delta
        self.rho = rho
        self.n_samples = n_samples
        self.seed = seed
        self.validate()

    def validate(self):
        check(self.m is None or float(self.m) > 0, "m must be > 0")
        check(0 < float(self.confidence_delta) < 1, "confidence_delta must be in (0, 1)")
        check(float(self.rho) > 0, "rho must be > 0")
        check(int(self.n_samples) >= 1, "n_samples must be >= 1")
        return None


class BoundReport:
    """
    The computable terms of the AWP generalization bound.

    The sharpness estimate is a sampled lower bound of the true maximum.

    """

    fields = (
        "d",
        "n0",
        "m",
        "rho",
        "param_norm",
        "train_loss",
        "sharpness_estimate",
        "perturbed_train_loss",
        "chi_tail_term",
        "kl_term",
        "confidence_term",
        "bound_value",
        "omitted_constant_note",
    )

    def __init__(self, **values):
        for k in self.fields:
            setattr(self, k, values.get(k))

    def __str__(self):
        return self.to_dataframe().T.to_string(header=False)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.fields}

    def to_dataframe(self):
        return pd.DataFrame([self.to_dict()])


# ------------------------------ LANDSCAPE ------------------------------
def random_unit_directions(n_parameters, n_directions, seed):
    """Gaussian directions normalized to unit 2-norm, one per row"""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((int(n_directions), int(n_parameters)))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def landscape_slice(spec, params, graph, probe, node_set=None, return_directions=False):
    """Loss along random unit directions ``L(theta + alpha * u_j)``

    :param spec: model spec
    :type spec: :class:`wtawp.nn.ModelSpec`
    :param params: model parameters
    :type params: :class:`wtawp.nn.ModelParams`
    :param graph: dataset
    :type graph: :class:`wtawp.datasets.core.Graph`
    :param probe: landscape options
    :type probe: :class:`LandscapeProbe`
    :param node_set: loss nodes (usually the training nodes). If None, all nodes
    :type node_set: :class:`numpy.ndarray`
    :param return_directions: also return the ``n_directions x d`` direction matrix
    :type return_directions: bool
    :return: table with ``alpha``, ``mean_loss``, ``mean_offset`` and one
        ``dir_<j>`` column per direction
    :rtype: :class:`pandas.DataFrame`
    """
    if node_set is None:
        node_set = np.arange(graph.n_nodes)
    adj = normalize_adjacency(graph)
    base = nn.loss_at(spec, params, adj, graph.features, graph.labels, node_set)
    theta = params.flatten()
    directions = random_unit_directions(params.n_parameters, probe.n_directions, probe.seed)
    records = []
    for alpha in probe.alphas:
        losses = []
        for u in directions:
            if alpha == 0:
                losses.append(base)
                continue
            moved = params.from_flat(theta + alpha * u)
            losses.append(nn.loss_at(spec, moved, adj, graph.features, graph.labels, node_set))
        row = {"alpha": alpha, "mean_loss": base if alpha == 0 else float(np.mean(losses))}
        row["mean_offset"] = row["mean_loss"] - base
        for j, value in enumerate(losses):
            row["dir_{}".format(j)] = value
        records.append(row)
    df = pd.DataFrame(records)
    if return_directions:
        return df, directions
    return df


# ------------------------------ SMOOTHNESS ------------------------------
def input_gradient_norms(spec, params, graph, node_set, cfg):
    """Input-gradient norm at every noisy sample

    :return: one norm per sample
    :rtype: :class:`numpy.ndarray`
    """
    adj = normalize_adjacency(graph)
    rng = np.random.default_rng(cfg.seed)
    sigma = float(cfg.noise_std)
    norms = np.zeros(int(cfg.n_samples))
    for s in range(int(cfg.n_samples)):
        if cfg.target == "features":
            noisy = graph.features + sigma * rng.standard_normal(graph.features.shape)
            _, g = nn.loss_and_input_grad(
                spec, params, adj, noisy, graph.labels, node_set, wrt="features"
            )
        else:
            values = adj.matrix.data + sigma * rng.standard_normal(adj.matrix.data.shape)
            _, g = nn.loss_and_input_grad(
                spec, params, adj.with_values(values), graph.features, graph.labels, node_set,
                wrt="normalized_adjacency",
            )
        norms[s] = np.linalg.norm(g.ravel())
    return norms


def input_gradient_smoothness(spec, params, graph, node_set, cfg):
    """Mean input-gradient norm over Gaussian-noised inputs

    The adjacency target differentiates w.r.t. the stored entries of the
    normalized adjacency.

    :param cfg: smoothness options
    :type cfg: :class:`SmoothnessConfig`
    :return: mean gradient norm
    :rtype: float
    """
    return float(np.mean(input_gradient_norms(spec, params, graph, node_set, cfg)))


# ------------------------------ GENERALIZATION ------------------------------
def sampled_sharpness(spec, params, adj, features, labels, node_set, rho, n_samples=20, seed=0, mask=None):
    """Max over random layer-wise perturbations of ``L(theta + delta) - L(theta)``

    Every sampled ``delta_i`` is Gaussian rescaled to ``||delta_i|| = rho * ||W_i||``.
    Samples are drawn sequentially, so a larger ``n_samples`` with the same
    seed never lowers the estimate. Floored at 0.

    :param mask: perturbed layers. If None, all layers
    :type mask: list
    :return: sharpness estimate
    :rtype: float
    """
    if mask is None:
        mask = [True] * len(params)
    if rho == 0:
        return 0.0
    base = nn.loss_at(spec, params, adj, features, labels, node_set)
    radii = float(rho) * params.layer_norms()
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(int(n_samples)):
        layers = []
        for w, r, m in zip(params.layers, radii, mask):
            d = rng.standard_normal(w.shape)
            norm = np.linalg.norm(d.ravel())
            layers.append(d * (r / norm) if (m and norm > 0) else np.zeros_like(w))
        moved = params.add(nn.GradientSet(layers))
        best = max(best, nn.loss_at(spec, moved, adj, features, labels, node_set) - base)
    return float(best)


def generalization_gap(spec, params, graph, split, rho=0.5, n_samples=20, seed=0):
    """Generalization gap ``L_all - L_train`` and the sampled sharpness

    :param split: node split
    :type split: :class:`wtawp.datasets.core.Split`
    :param rho: sharpness radius factor
    :type rho: float
    :param n_samples: sharpness samples
    :type n_samples: int
    :return: ``{"train_loss", "all_nodes_loss", "gap", "sharpness", "rho", "n_samples"}``
    :rtype: dict
    """
    adj = normalize_adjacency(graph)
    logits = nn.predict(spec, params, adj, graph.features)
    train_loss = nn.mean_cross_entropy(logits, graph.labels, split.train_ids)
    all_loss = nn.mean_cross_entropy(logits, graph.labels, np.arange(graph.n_nodes))
    sharpness = sampled_sharpness(
        spec, params, adj, graph.features, graph.labels, split.train_ids,
        rho=rho, n_samples=n_samples, seed=seed,
    )
    return {
        "train_loss": train_loss,
        "all_nodes_loss": all_loss,
        "gap": all_loss - train_loss,
        "sharpness": sharpness,
        "rho": float(rho),
        "n_samples": int(n_samples),
    }


def chi_tail_term(d, m):
    """``(m^2/d * exp(1 - m^2/d))^(d/2)``, computed in log space"""
    x = float(m) ** 2 / float(d)
    return float(np.exp(0.5 * d * (np.log(x) + 1.0 - x)))


def kl_term(d, m, n0, param_norm, rho):
    """``1/(2 sqrt(N0)) * [1 + d log(1 + m^2 ||theta||^2 / (d rho^2))]``"""
    return float((1.0 + d * np.log1p((m ** 2) * (param_norm ** 2) / (d * rho ** 2))) / (2.0 * np.sqrt(n0)))


def confidence_term(n0, confidence_delta):
    """``(ln(3/delta) + 1/4) / sqrt(N0)``"""
    return float((np.log(3.0 / confidence_delta) + 0.25) / np.sqrt(n0))


def bound_terms(spec, params, split, graph, cfg):
    """Evaluate the computable terms of the AWP generalization bound

    :param cfg: bound options
    :type cfg: :class:`BoundConfig`
    :return: bound report
    :rtype: :class:`BoundReport`
    """
    d = params.n_parameters
    m = np.sqrt(d) if cfg.m is None else float(cfg.m)
    # small slack so that m = sqrt(d) passes after rounding
    if m ** 2 < d * (1.0 - 1e-12):
        raise ConfigError("m = {} is below sqrt(d) = {:.6g}".format(m, np.sqrt(d)))
    n0 = len(split.train_ids)
    if n0 == 0:
        raise ValueError("split has no training nodes")
    rho = float(cfg.rho)
    param_norm = params.norm()
    gap = generalization_gap(spec, params, graph, split, rho=rho, n_samples=cfg.n_samples, seed=cfg.seed)
    chi = chi_tail_term(d, m)
    kl = kl_term(d, m, n0, param_norm, rho)
    conf = confidence_term(n0, float(cfg.confidence_delta))
    perturbed = gap["train_loss"] + gap["sharpness"]
    return BoundReport(
        d=int(d),
        n0=int(n0),
        m=float(m),
        rho=rho,
        param_norm=param_norm,
        train_loss=gap["train_loss"],
        sharpness_estimate=gap["sharpness"],
        perturbed_train_loss=perturbed,
        chi_tail_term=chi,
        kl_term=kl,
        confidence_term=conf,
        bound_value=perturbed + chi + kl + conf,
        omitted_constant_note="Theta(K * eps_all) not computed",
    )


# ------------------------------ STATISTICS ------------------------------
def welch_t_test(sample_a, sample_b):
    """Two-sided Welch's unequal-variance t-test

    :param sample_a: first sample (size >= 2)
    :type sample_a: :class:`numpy.ndarray`
    :param sample_b: second sample (size >= 2)
    :type sample_b: :class:`numpy.ndarray`
    :return: ``{"t", "p_two_sided", "df"}``
    :rtype: dict
    """
    from scipy.stats import ttest_ind

    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values, got {} and {}".format(len(a), len(b)))
    if np.var(a) == 0 and np.var(b) == 0:
        raise ValueError("both samples have zero variance")
    result = ttest_ind(a, b, equal_var=False)
    return {
        "t": float(result.statistic),
        "p_two_sided": float(min(result.pvalue, 1.0)),
        "df": float(result.df),
    }
