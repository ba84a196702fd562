"""
Models, losses, gradients and optimizer

Description:
    The ``nn`` module provides the three bias-free models (2-layer GCN,
    APPNP-style PPNP and a 3-layer linear MLP), the softmax cross-entropy loss,
    exact reverse-mode gradients written by hand, dropout and Adam.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

All arithmetic is double precision. Models never see the softmax: ``forward``
returns logits and ``loss_and_grad`` applies a mean-reduced cross-entropy over
a node set. Gradients are backpropagated through the cached forward pass with
the same dropout mask, so a fixed ``dropout_seed`` defines a deterministic
function that can be checked against finite differences.

Example
-------

.. code-block:: python

    from wtawp import nn
    from wtawp.datasets import core, toys

    graph = toys.generate_linear_toy()
    adj = core.normalize_adjacency(graph)
    spec = nn.ModelSpec.build("GCN2", n_features=2, n_classes=2, hidden_dim=16)
    params = nn.init_params(spec, seed=0)
    loss, grads = nn.loss_and_grad(
        spec, params, adj, graph.features, graph.labels, node_set=[0, 1, 2],
        dropout_seed=7,
    )

"""
import json
import numpy as np
import pandas as pd
from scipy.special import log_softmax

from wtawp.root import Options, check

MODEL_KINDS = ("GCN2", "PPNP", "MLP3")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def derive_seed(seed, *keys):
    """Derive an independent child seed from a base seed and integer keys

    :return: seed, or None when ``seed`` is None
    :rtype: int
    """
    if seed is None:
        return None
    state = np.random.SeedSequence([int(seed)] + [int(k) for k in keys]).generate_state(1)
    return int(state[0])


# ------------------------------ SPECS ------------------------------
class ModelSpec(Options):
    """
    Model architecture options.

    ``dims`` lists input, hidden and output sizes: 3 entries for ``GCN2`` and
    ``PPNP``, 4 entries for ``MLP3``.

    """

    fields = ("kind", "dims", "ppnp_k", "ppnp_alpha", "dropout_rate")

    def __init__(self, kind="GCN2", dims=(2, 64, 2), ppnp_k=10, ppnp_alpha=0.1, dropout_rate=0.5):
        super().__init__()
        self.kind = kind
        self.dims = tuple(dims)
        self.ppnp_k = ppnp_k
        self.ppnp_alpha = ppnp_alpha
        self.dropout_rate = dropout_rate
        self.validate()

    def validate(self):
        self.dims = tuple(int(d) for d in self.dims)
        check(self.kind in MODEL_KINDS, "kind must be one of {}, got '{}'".format(MODEL_KINDS, self.kind))
        n_dims = 4 if self.kind == "MLP3" else 3
        check(len(self.dims) == n_dims, "{} expects {} dims, got {}".format(self.kind, n_dims, self.dims))
        check(all(d > 0 for d in self.dims), "dims must be positive")
        check(int(self.ppnp_k) >= 0, "ppnp_k must be >= 0")
        check(0 < float(self.ppnp_alpha) <= 1, "ppnp_alpha must be in (0, 1]")
        check(0 <= float(self.dropout_rate) < 1, "dropout_rate must be in [0, 1)")
        return None

    @property
    def n_layers(self):
        return len(self.dims) - 1

    def layer_shapes(self):
        """Get the ``(rows, cols)`` shape of every weight matrix"""
        return [(self.dims[i], self.dims[i + 1]) for i in range(self.n_layers)]

    @classmethod
    def build(cls, kind, n_features, n_classes, hidden_dim=64, **kwargs):
        """Build a spec from the data sizes

        :param kind: model kind (``GCN2``, ``PPNP`` or ``MLP3``)
        :type kind: str
        :param n_features: input size
        :type n_features: int
        :param n_classes: output size
        :type n_classes: int
        :param hidden_dim: hidden size (both hidden layers for ``MLP3``)
        :type hidden_dim: int
        :return: model spec
        :rtype: :class:`ModelSpec`
        """
        if kind == "MLP3":
            dims = (n_features, hidden_dim, hidden_dim, n_classes)
        else:
            dims = (n_features, hidden_dim, n_classes)
        return cls(kind=kind, dims=dims, **kwargs)


# ------------------------------ PARAMETERS ------------------------------
class LayerStack:
    """
    Ordered list of dense weight-shaped matrices with elementwise arithmetic.

    """

    def __init__(self, layers):
        self.layers = [np.array(w, dtype=np.float64) for w in layers]

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def shapes(self):
        return [w.shape for w in self.layers]

    @property
    def n_parameters(self):
        return int(sum(w.size for w in self.layers))

    def _new(self, layers):
        return self.__class__(layers)

    def copy(self):
        return self._new([w.copy() for w in self.layers])

    def zeros_like(self):
        return self._new([np.zeros_like(w) for w in self.layers])

    def add(self, other, coeff=1.0):
        """Get ``self + coeff * other`` layer by layer"""
        if other.shapes() != self.shapes():
            raise ValueError("shape mismatch: {} vs {}".format(self.shapes(), other.shapes()))
        return self._new([w + coeff * o for w, o in zip(self.layers, other.layers)])

    def scale(self, coeff):
        return self._new([coeff * w for w in self.layers])

    def layer_norms(self):
        """Entrywise 2-norm of every flattened layer"""
        return np.array([np.linalg.norm(w.ravel()) for w in self.layers])

    def norm(self):
        """Entrywise 2-norm of the whole flattened stack"""
        return float(np.linalg.norm(self.flatten()))

    def flatten(self):
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([w.ravel() for w in self.layers])

    def from_flat(self, vector):
        """Get a stack with the same shapes filled from a flat vector"""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.n_parameters:
            raise ValueError("expected {} values, got {}".format(self.n_parameters, vector.size))
        layers = []
        start = 0
        for w in self.layers:
            layers.append(vector[start:start + w.size].reshape(w.shape).copy())
            start += w.size
        return self._new(layers)

    def layers_to_dict(self):
        return [
            {"rows": int(w.shape[0]), "cols": int(w.shape[1]), "data": w.ravel().tolist()}
            for w in self.layers
        ]


class GradientSet(LayerStack):
    """
    Per-layer gradients (or perturbations), shape-matched to a :class:`ModelParams`.

    """


class ModelParams(LayerStack):
    """
    Ordered weight matrices ``W_1 ... W_k`` plus the mask of the layers that
    receive adversarial weight perturbation.

    """

    def __init__(self, layers, awp_mask=None):
        super().__init__(layers)
        if len(self.layers) == 0:
            raise ValueError("ModelParams needs at least one layer")
        if awp_mask is None:
            awp_mask = [True] + [False] * (len(self.layers) - 1)
        self.awp_mask = [bool(b) for b in awp_mask]
        if len(self.awp_mask) != len(self.layers):
            raise ValueError(
                "awp_mask has {} entries for {} layers".format(len(self.awp_mask), len(self.layers))
            )

    def _new(self, layers):
        return ModelParams(layers, awp_mask=list(self.awp_mask))

    def with_mask(self, awp_mask):
        return ModelParams([w.copy() for w in self.layers], awp_mask=awp_mask)

    def to_dict(self):
        return {"layers": self.layers_to_dict(), "awp_mask": list(self.awp_mask)}

    def to_json(self, file_path):
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        return file_path

    @classmethod
    def from_dict(cls, dct):
        layers = [
            np.asarray(layer["data"], dtype=np.float64).reshape(layer["rows"], layer["cols"])
            for layer in dct["layers"]
        ]
        return cls(layers, awp_mask=dct.get("awp_mask"))

    @classmethod
    def from_json(cls, file_path):
        with open(file_path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def init_params(spec, seed, awp_mask=None):
    """Glorot-uniform initialization, one draw per layer from one seed stream

    :param spec: model spec
    :type spec: :class:`ModelSpec`
    :param seed: initialization seed
    :type seed: int
    :param awp_mask: perturbed layers. If None, the first layer only
    :type awp_mask: list
    :return: parameters
    :rtype: :class:`ModelParams`
    """
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in spec.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return ModelParams(layers, awp_mask=awp_mask)


def check_shapes(spec, params, features):
    """Raise ``ValueError`` naming the first layer whose shape does not chain"""
    if len(params) != spec.n_layers:
        raise ValueError("{} expects {} layers, got {}".format(spec.kind, spec.n_layers, len(params)))
    n_in = features.shape[1]
    for i, w in enumerate(params.layers):
        if w.shape[0] != n_in:
            raise ValueError(
                "layer {} (W_{}) expects {} input columns, got shape {}".format(i, i + 1, n_in, w.shape)
            )
        n_in = w.shape[1]
    return None


# ------------------------------ FORWARD / BACKWARD ------------------------------
class ForwardCache:
    """
    Activations and dropout mask kept by :func:`forward` for :func:`backward`.

    """

    def __init__(self, kind, features, adj, mask, **activations):
        self.kind = kind
        self.features = features
        self.adj = adj
        self.mask = mask
        self.activations = activations

    def __getitem__(self, key):
        return self.activations[key]


def dropout_mask(shape, rate, seed):
    """Inverted-dropout mask (kept units scaled by ``1 / (1 - rate)``)

    :return: mask, or None when dropout is off
    :rtype: :class:`numpy.ndarray`
    """
    if seed is None or rate <= 0:
        return None
    rng = np.random.default_rng(seed)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def relu(x):
    return np.maximum(x, 0.0)


def propagate(adj, h, k, alpha):
    """Personalized-PageRank propagation ``Z <- (1 - alpha) A_hat Z + alpha H``

    :return: final ``Z`` and the list of all iterates ``Z_0 ... Z_k``
    :rtype: tuple
    """
    z = h
    iterates = [z]
    for _ in range(int(k)):
        z = (1.0 - alpha) * adj.dot(z) + alpha * h
        iterates.append(z)
    return z, iterates


def forward(spec, params, adj, features, dropout_seed=None):
    """Compute the logits of a model

    :param spec: model spec
    :type spec: :class:`ModelSpec`
    :param params: model parameters
    :type params: :class:`ModelParams`
    :param adj: normalized adjacency (ignored by ``MLP3``)
    :type adj: :class:`wtawp.datasets.core.NormalizedAdjacency`
    :param features: node features
    :type features: :class:`numpy.ndarray`
    :param dropout_seed: dropout mask seed. None means evaluation mode
    :type dropout_seed: int
    :return: logits and the forward cache
    :rtype: tuple
    """
    check_shapes(spec, params, features)
    if spec.kind == "GCN2":
        w1, w2 = params.layers
        xw = features @ w1
        z1 = adj.dot(xw)
        h1 = relu(z1)
        mask = dropout_mask(h1.shape, spec.dropout_rate, dropout_seed)
        d = h1 if mask is None else h1 * mask
        dw = d @ w2
        logits = adj.dot(dw)
        cache = ForwardCache(spec.kind, features, adj, mask, xw=xw, z1=z1, d=d, dw=dw)
    elif spec.kind == "PPNP":
        w1, w2 = params.layers
        h0 = features @ w1
        h1 = relu(h0)
        mask = dropout_mask(h1.shape, spec.dropout_rate, dropout_seed)
        d = h1 if mask is None else h1 * mask
        h = d @ w2
        logits, iterates = propagate(adj, h, spec.ppnp_k, spec.ppnp_alpha)
        cache = ForwardCache(spec.kind, features, adj, mask, h0=h0, d=d, iterates=iterates)
    else:
        # pure linear stack, no dropout
        w1, w2, w3 = params.layers
        h1 = features @ w1
        h2 = h1 @ w2
        logits = h2 @ w3
        cache = ForwardCache(spec.kind, features, adj, None, h1=h1, h2=h2)
    return logits, cache


def _pattern_grad(adj, g_out, right):
    # d/dA_ij of (A @ right) against upstream g_out, on the stored pattern
    return np.einsum("ij,ij->i", g_out[adj.rows], right[adj.cols])


def backward(spec, params, cache, g_logits, with_inputs=False):
    """Backpropagate a logits gradient through a cached forward pass

    :param spec: model spec
    :type spec: :class:`ModelSpec`
    :param params: parameters used in the forward pass
    :type params: :class:`ModelParams`
    :param cache: forward cache
    :type cache: :class:`ForwardCache`
    :param g_logits: gradient of the loss w.r.t. the logits
    :type g_logits: :class:`numpy.ndarray`
    :param with_inputs: also return gradients w.r.t. the features and the stored
        entries of the normalized adjacency
    :type with_inputs: bool
    :return: weight gradients, and a dict ``{"features", "normalized_adjacency"}``
        when ``with_inputs`` is set
    :rtype: :class:`GradientSet` | tuple
    """
    features = cache.features
    adj = cache.adj
    g_adj = None
    if spec.kind == "GCN2":
        w1, w2 = params.layers
        t2 = adj.tdot(g_logits)
        g_w2 = cache["d"].T @ t2
        g_d = t2 @ w2.T
        g_h1 = g_d if cache.mask is None else g_d * cache.mask
        # relu'(0) = 0
        g_z1 = g_h1 * (cache["z1"] > 0)
        t1 = adj.tdot(g_z1)
        g_w1 = features.T @ t1
        grads = GradientSet([g_w1, g_w2])
        if with_inputs:
            g_x = t1 @ w1.T
            g_adj = _pattern_grad(adj, g_logits, cache["dw"]) + _pattern_grad(adj, g_z1, cache["xw"])
    elif spec.kind == "PPNP":
        w1, w2 = params.layers
        alpha = spec.ppnp_alpha
        iterates = cache["iterates"]
        g = g_logits
        g_h = np.zeros_like(g_logits)
        if with_inputs:
            g_adj = np.zeros(len(adj.rows))
        for t in reversed(range(len(iterates) - 1)):
            g_h = g_h + alpha * g
            if with_inputs:
                g_adj = g_adj + (1.0 - alpha) * _pattern_grad(adj, g, iterates[t])
            g = (1.0 - alpha) * adj.tdot(g)
        g_h = g_h + g
        g_w2 = cache["d"].T @ g_h
        g_d = g_h @ w2.T
        g_h1 = g_d if cache.mask is None else g_d * cache.mask
        g_h0 = g_h1 * (cache["h0"] > 0)
        g_w1 = features.T @ g_h0
        grads = GradientSet([g_w1, g_w2])
        if with_inputs:
            g_x = g_h0 @ w1.T
    else:
        w1, w2, w3 = params.layers
        g_w3 = cache["h2"].T @ g_logits
        g_h2 = g_logits @ w3.T
        g_w2 = cache["h1"].T @ g_h2
        g_h1 = g_h2 @ w2.T
        g_w1 = features.T @ g_h1
        grads = GradientSet([g_w1, g_w2, g_w3])
        if with_inputs:
            g_x = g_h1 @ w1.T
            g_adj = np.zeros(0 if adj is None else len(adj.rows))
    if with_inputs:
        return grads, {"features": g_x, "normalized_adjacency": g_adj}
    return grads


# ------------------------------ LOSS ------------------------------
def _node_index(node_set):
    idx = np.asarray(node_set, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("node_set is empty")
    return idx


def cross_entropy(logits, labels, node_set):
    """Mean softmax cross-entropy over a node set and its logits gradient

    :return: loss and gradient w.r.t. all logits (zero outside ``node_set``)
    :rtype: tuple
    """
    idx = _node_index(node_set)
    y = np.asarray(labels)[idx]
    lsm = log_softmax(logits[idx], axis=1)
    rows = np.arange(len(idx))
    loss = -float(np.mean(lsm[rows, y]))
    probs = np.exp(lsm)
    probs[rows, y] -= 1.0
    g_logits = np.zeros_like(logits)
    np.add.at(g_logits, idx, probs / len(idx))
    return loss, g_logits


def mean_cross_entropy(logits, labels, node_set):
    """Mean softmax cross-entropy over a node set (no gradient)"""
    idx = _node_index(node_set)
    lsm = log_softmax(logits[idx], axis=1)
    return -float(np.mean(lsm[np.arange(len(idx)), np.asarray(labels)[idx]]))


def weight_decay_term(params, weight_decay):
    """``0.5 * weight_decay * sum ||W_i||^2``"""
    if weight_decay == 0:
        return 0.0
    return 0.5 * weight_decay * float(sum(np.sum(w * w) for w in params.layers))


def loss_and_grad(spec, params, adj, features, labels, node_set, dropout_seed=None, weight_decay=0.0):
    """Loss over ``node_set`` and its exact gradient w.r.t. every weight

    The loss is the mean cross-entropy plus ``0.5 * weight_decay * ||theta||^2``.

    :param dropout_seed: dropout mask seed. None means evaluation mode
    :type dropout_seed: int
    :param weight_decay: L2 coefficient (0 during training, where Adam adds it)
    :type weight_decay: float
    :return: loss and gradients
    :rtype: tuple
    """
    logits, cache = forward(spec, params, adj, features, dropout_seed=dropout_seed)
    loss, g_logits = cross_entropy(logits, labels, node_set)
    grads = backward(spec, params, cache, g_logits)
    if weight_decay != 0:
        loss = loss + weight_decay_term(params, weight_decay)
        grads = grads.add(GradientSet(params.layers), coeff=weight_decay)
    return loss, grads


def loss_at(spec, params, adj, features, labels, node_set, dropout_seed=None, weight_decay=0.0):
    """Loss only, same contract as :func:`loss_and_grad`

    :return: loss
    :rtype: float
    """
    logits, _ = forward(spec, params, adj, features, dropout_seed=dropout_seed)
    return mean_cross_entropy(logits, labels, node_set) + weight_decay_term(params, weight_decay)


def loss_and_input_grad(spec, params, adj, features, labels, node_set, wrt="features"):
    """Evaluation-mode loss and its gradient w.r.t. an input

    :param wrt: ``features`` (dense gradient like ``X``) or
        ``normalized_adjacency`` (gradient per stored entry of ``A_hat``,
        ordered as ``adj.matrix.data``)
    :type wrt: str
    :return: loss and input gradient
    :rtype: tuple
    """
    if wrt not in ("features", "normalized_adjacency"):
        raise ValueError("wrt must be 'features' or 'normalized_adjacency', got '{}'".format(wrt))
    logits, cache = forward(spec, params, adj, features, dropout_seed=None)
    loss, g_logits = cross_entropy(logits, labels, node_set)
    _, g_inputs = backward(spec, params, cache, g_logits, with_inputs=True)
    return loss, g_inputs[wrt]


def predict(spec, params, adj, features):
    """Evaluation-mode logits"""
    logits, _ = forward(spec, params, adj, features, dropout_seed=None)
    return logits


def accuracy(logits, labels, node_set):
    """Fraction of ``node_set`` whose argmax logit equals the label

    Ties go to the lowest class index.

    :return: accuracy in ``[0, 1]``
    :rtype: float
    """
    idx = _node_index(node_set)
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))


def check_gradients(
    spec,
    params,
    adj,
    features,
    labels,
    node_set,
    dropout_seed=None,
    weight_decay=0.0,
    h=1e-5,
    rtol=1e-5,
    atol=1e-8,
):
    """Compare the analytic gradient with central finite differences entrywise

    An entry passes when its relative error is below ``rtol`` or its absolute
    error is below ``atol``.

    :return: one row per weight entry with ``layer``, ``row``, ``col``,
        ``analytic``, ``numeric``, ``abs_error``, ``rel_error``, ``passed``
    :rtype: :class:`pandas.DataFrame`
    """
    _, grads = loss_and_grad(
        spec, params, adj, features, labels, node_set, dropout_seed=dropout_seed, weight_decay=weight_decay
    )
    records = []
    for i, w in enumerate(params.layers):
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                plus = params.copy()
                plus.layers[i][r, c] += h
                minus = params.copy()
                minus.layers[i][r, c] -= h
                f_plus = loss_at(spec, plus, adj, features, labels, node_set, dropout_seed, weight_decay)
                f_minus = loss_at(spec, minus, adj, features, labels, node_set, dropout_seed, weight_decay)
                numeric = (f_plus - f_minus) / (2.0 * h)
                analytic = grads.layers[i][r, c]
                abs_error = abs(analytic - numeric)
                rel_error = abs_error / max(abs(analytic), abs(numeric), atol)
                records.append(
                    {
                        "layer": i,
                        "row": r,
                        "col": c,
                        "analytic": analytic,
                        "numeric": numeric,
                        "abs_error": abs_error,
                        "rel_error": rel_error,
                        "passed": bool(rel_error < rtol or abs_error < atol),
                    }
                )
    return pd.DataFrame(records)


def random_problem(kind, seed, n_nodes=6, n_features=3, hidden_dim=4, n_classes=3, edge_prob=0.4):
    """Small random instance for gradient checks and diagnostics

    :return: ``(spec, params, adj, features, labels, node_set)``, dropout off in ``spec``
    :rtype: tuple
    """
    from wtawp.datasets.core import edges_to_adjacency, normalize_adjacency

    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < edge_prob]
    adj = normalize_adjacency(edges_to_adjacency(n_nodes, pairs))
    features = rng.standard_normal((n_nodes, n_features))
    labels = rng.integers(n_classes, size=n_nodes)
    spec = ModelSpec.build(kind, n_features=n_features, n_classes=n_classes, hidden_dim=hidden_dim, dropout_rate=0.0)
    params = init_params(spec, seed=int(rng.integers(2 ** 31)))
    node_set = np.arange(n_nodes)
    return spec, params, adj, features, labels, node_set


# ------------------------------ OPTIMIZER ------------------------------
class AdamState:
    """
    Adam moment estimates. Single-owner mutable state.

    """

    def __init__(self):
        self.step = 0
        self.m = None
        self.v = None

    def is_fresh(self):
        return self.m is None


def adam_step(state, params, grads, lr, weight_decay=0.0, betas=ADAM_BETAS, eps=ADAM_EPS):
    """One Adam update with bias correction and coupled L2 weight decay

    ``weight_decay * W`` is added to the gradient before the moment update.

    :param state: optimizer state, updated in place
    :type state: :class:`AdamState`
    :param params: current parameters (not modified)
    :type params: :class:`ModelParams`
    :param grads: gradients
    :type grads: :class:`GradientSet`
    :param lr: learning rate
    :type lr: float
    :param weight_decay: L2 coefficient
    :type weight_decay: float
    :return: new parameters and the state
    :rtype: tuple
    """
    if grads.shapes() != params.shapes():
        raise ValueError("gradient shapes {} do not match {}".format(grads.shapes(), params.shapes()))
    beta1, beta2 = betas
    if state.is_fresh():
        state.m = [np.zeros_like(w) for w in params.layers]
        state.v = [np.zeros_like(w) for w in params.layers]
    state.step += 1
    bias_correction1 = 1.0 - beta1 ** state.step
    bias_correction2 = 1.0 - beta2 ** state.step
    new_layers = []
    for i, (w, g) in enumerate(zip(params.layers, grads.layers)):
        if weight_decay != 0:
            g = g + weight_decay * w
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / bias_correction1
        v_hat = state.v[i] / bias_correction2
        new_layers.append(w - lr * m_hat / (np.sqrt(v_hat) + eps))
    return ModelParams(new_layers, awp_mask=list(params.awp_mask)), state
