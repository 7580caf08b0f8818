"""ReLU input-convex networks, plain MLP baselines, and violation heads.

Layer layout for ``K`` hidden layers (row-vector convention, ``X`` is n x d)::

    z_1     = relu(X wx[0]^T + b[0])
    z_{k+1} = relu(z_k wz[k-1]^T + X wx[k]^T + b[k])      k = 1..K-1
    y       = z_K wz[K-1]^T + X wx[K]^T + b[K]

An ICNN keeps every ``wz`` elementwise non-negative; that, with the convex
non-decreasing ReLU, makes each output convex in ``X``.  An MLP has no
passthrough (``wx[k] is None`` for k >= 1) and no sign constraint.

Networks are trained in standardised coordinates and carry the scaler in a
:class:`Normalization` record.  :func:`fold_normalization` absorbs it into the
weights so that the LP/MILP embeddings work directly in kW / kVar.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataHeadMismatch,
    DimensionMismatch,
    DivergedLoss,
    EmptyTestSet,
    HeadLimitMismatch,
    MalformedFile,
    NegativeOutputScale,
    NegativeZWeight,
    SolverFailure,
)
from .lp import GE, LpProblem, solve_lp

HEAD_KINDS = ("loss", "v", "ol", "rpf")


@dataclass
class Normalization:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def fit(cls, X, Y):
        xs = X.std(axis=0)
        ys = Y.std(axis=0)
        xs[xs < 1e-12] = 1.0
        ys[ys < 1e-12] = 1.0
        return cls(X.mean(axis=0), xs, Y.mean(axis=0), ys)

    @classmethod
    def identity(cls, d_in, d_out):
        return cls(np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_scale", "y_mean", "y_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("x_mean", "x_scale", "y_mean", "y_scale")))


@dataclass
class ReluNet:
    wx: list  # passthrough matrices, entries may be None
    wz: list  # feedforward matrices, wz[k-1] feeds layer k+1 (k = 1..K)
    b: list
    head_kind: str = "loss"
    norm: Normalization | None = None
    folded: bool = False
    mask: list | None = None  # bus or line indices the outputs refer to
    plan_fingerprint: str | None = None
    training: dict = field(default_factory=dict)

    kind = "relu"

    @property
    def K(self):
        return len(self.wz)

    @property
    def input_dim(self):
        return self.wx[0].shape[1]

    @property
    def output_dim(self):
        return self.b[-1].shape[0]

    @property
    def hidden(self):
        return [w.shape[0] for w in self.b[:-1]]

    def params(self):
        """Trainable arrays in a fixed order (shared with :meth:`grads`)."""
        out = [self.wx[0], self.b[0]]
        for k in range(1, self.K + 1):
            out.append(self.wz[k - 1])
            if self.wx[k] is not None:
                out.append(self.wx[k])
            out.append(self.b[k])
        return out

    def copy(self):
        return copy.deepcopy(self)

    def _forward_norm(self, Xn):
        """Forward pass in the network's own coordinates; keeps activations."""
        pre = [Xn @ self.wx[0].T + self.b[0]]
        zs = [np.maximum(pre[0], 0.0)]
        for k in range(1, self.K):
            a = zs[-1] @ self.wz[k - 1].T + self.b[k]
            if self.wx[k] is not None:
                a = a + Xn @ self.wx[k].T
            pre.append(a)
            zs.append(np.maximum(a, 0.0))
        y = zs[-1] @ self.wz[-1].T + self.b[-1]
        if self.wx[-1] is not None:
            y = y + Xn @ self.wx[-1].T
        return pre, zs, y

    def _in(self, X):
        if self.norm is None or self.folded:
            return X
        return (X - self.norm.x_mean) / self.norm.x_scale

    def _out(self, Y):
        if self.norm is None or self.folded:
            return Y
        return Y * self.norm.y_scale + self.norm.y_mean


class IcnnModel(ReluNet):
    kind = "icnn"

    @classmethod
    def init(cls, input_dim, hidden, output_dim, rng, head_kind="loss"):
        hidden = list(hidden)
        if not hidden:
            raise ValueError("an ICNN needs at least one hidden layer")
        wx, wz, b = [], [], []
        lim = 1.0 / math.sqrt(input_dim)
        wx.append(rng.uniform(-lim, lim, (hidden[0], input_dim)))
        b.append(rng.uniform(-lim, lim, hidden[0]))
        sizes = hidden + [output_dim]
        for k in range(1, len(sizes)):
            lim = 1.0 / math.sqrt(sizes[k - 1] + input_dim)
            wz.append(np.abs(rng.uniform(-lim, lim, (sizes[k], sizes[k - 1]))))
            wx.append(rng.uniform(-lim, lim, (sizes[k], input_dim)))
            b.append(rng.uniform(-lim, lim, sizes[k]))
        return cls(wx, wz, b, head_kind=head_kind)


class MlpModel(ReluNet):
    kind = "mlp"

    @classmethod
    def init(cls, input_dim, hidden, output_dim, rng, head_kind="loss"):
        hidden = list(hidden)
        sizes = [input_dim] + hidden + [output_dim]
        wx, wz, b = [], [], []
        lim = 1.0 / math.sqrt(input_dim)
        wx.append(rng.uniform(-lim, lim, (sizes[1], input_dim)))
        b.append(rng.uniform(-lim, lim, sizes[1]))
        for k in range(2, len(sizes)):
            lim = 1.0 / math.sqrt(sizes[k - 1])
            wz.append(rng.uniform(-lim, lim, (sizes[k], sizes[k - 1])))
            wx.append(None)
            b.append(rng.uniform(-lim, lim, sizes[k]))
        return cls(wx, wz, b, head_kind=head_kind)


def forward(model: ReluNet, x):
    """Evaluate in physical units; accepts one vector or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected {model.input_dim} inputs, got {X.shape[1]}")
    _, _, y = model._forward_norm(model._in(X))
    y = model._out(y)
    return y[0] if single else y


def preactivations(model: ReluNet, x):
    """Hidden-layer preactivations for one input vector (physical units)."""
    x = np.asarray(x, dtype=float)
    pre, _, _ = model._forward_norm(model._in(x[None, :]))
    return [a[0] for a in pre]


def gradients(model: ReluNet, Xn, Yn):
    """Mean-squared error and its gradient w.r.t. :meth:`ReluNet.params`.

    Works in the network's own (normalised) coordinates.
    """
    pre, zs, y = model._forward_norm(Xn)
    diff = y - Yn
    loss = float(np.mean(diff * diff))
    G = 2.0 * diff / diff.size
    K = model.K
    grads = {}
    grads[("wz", K - 1)] = G.T @ zs[-1]
    if model.wx[K] is not None:
        grads[("wx", K)] = G.T @ Xn
    grads[("b", K)] = G.sum(axis=0)
    dz = G @ model.wz[K - 1]
    for k in range(K - 1, 0, -1):
        da = dz * (pre[k] > 0)
        grads[("wz", k - 1)] = da.T @ zs[k - 1]
        if model.wx[k] is not None:
            grads[("wx", k)] = da.T @ Xn
        grads[("b", k)] = da.sum(axis=0)
        dz = da @ model.wz[k - 1]
    da = dz * (pre[0] > 0)
    grads[("wx", 0)] = da.T @ Xn
    grads[("b", 0)] = da.sum(axis=0)
    ordered = [grads[("wx", 0)], grads[("b", 0)]]
    for k in range(1, K + 1):
        ordered.append(grads[("wz", k - 1)])
        if model.wx[k] is not None:
            ordered.append(grads[("wx", k)])
        ordered.append(grads[("b", k)])
    return loss, ordered


def project_nonnegative(model: ReluNet):
    """Clamp every feedforward weight of an ICNN at zero, in place; returns the model."""
    for w in model.wz:
        np.maximum(w, 0.0, out=w)
    return model


def min_z_weight(model):
    return min(float(w.min()) for w in model.wz)


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 256
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    patience: int = 20
    validation_fraction: float = 0.1
    lr_decay: float = 0.5  # applied after patience // 2 stale epochs
    min_lr: float = 1e-5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0 or self.patience <= 0:
            raise ValueError("training configuration values must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")


def train(model: ReluNet, train_set, val_set, cfg: TrainConfig):
    """Fit ``model`` in place on (X, Y) pairs; returns (model, curve).

    The model is given a fresh :class:`Normalization` fitted on the training
    rows.  ICNN feedforward weights are projected onto the non-negative orthant
    after every optimiser step.  The best validation state is restored.
    """
    X, Y = (np.asarray(a, dtype=float) for a in train_set)
    Xv, Yv = (np.asarray(a, dtype=float) for a in val_set)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Yv.ndim == 1:
        Yv = Yv[:, None]
    if Y.shape[1] != model.output_dim or Yv.shape[1] != model.output_dim:
        raise DataHeadMismatch(f"targets have {Y.shape[1]} columns, head expects {model.output_dim}")
    if X.shape[1] != model.input_dim or X.shape[0] != Y.shape[0]:
        raise DataHeadMismatch("input columns or row counts do not match the model")
    if cfg.epochs == 0:
        return model, []
    if model.folded:
        raise ValueError("cannot train a folded model")
    convex = isinstance(model, IcnnModel)
    if convex:
        project_nonnegative(model)
    model.norm = Normalization.fit(X, Y)
    Xn = (X - model.norm.x_mean) / model.norm.x_scale
    Yn = (Y - model.norm.y_mean) / model.norm.y_scale
    Xvn = (Xv - model.norm.x_mean) / model.norm.x_scale
    Yvn = (Yv - model.norm.y_mean) / model.norm.y_scale

    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    lr = cfg.lr
    step = 0

    def val_loss():
        _, _, yv = model._forward_norm(Xvn)
        return float(np.mean((yv - Yvn) ** 2))

    best = val_loss()
    best_params = [p.copy() for p in params]
    curve = [(0, math.nan, best)]
    stale = 0
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = gradients(model, Xn[idx], Yn[idx])
            if not math.isfinite(loss):
                raise DivergedLoss(f"training loss became {loss} at epoch {epoch}")
            total += loss * idx.size
            step += 1
            for p, g, a, v in zip(params, grads, m1, m2):
                if cfg.optimizer == "adam":
                    a *= beta1
                    a += (1 - beta1) * g
                    v *= beta2
                    v += (1 - beta2) * g * g
                    p -= lr * (a / (1 - beta1 ** step)) / (np.sqrt(v / (1 - beta2 ** step)) + eps)
                else:
                    p -= lr * g
            if convex:
                project_nonnegative(model)
        current = val_loss()
        if not math.isfinite(current):
            raise DivergedLoss(f"validation loss became {current} at epoch {epoch}")
        curve.append((epoch, total / n, current))
        if current < best * (1 - 1e-4):
            best = current
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale % max(1, cfg.patience // 2) == 0 and lr > cfg.min_lr:
                lr = max(lr * cfg.lr_decay, cfg.min_lr)
            if stale >= cfg.patience:
                break
    for p, saved in zip(params, best_params):
        p[...] = saved
    model.training.update({"epochs_run": len(curve) - 1, "best_val_mse": best,
                           "config": cfg.__dict__.copy()})
    return model, curve


def nmae(model, X, Y, normalizer):
    """Mean absolute error over all output entries divided by ``normalizer``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] == 0:
        raise EmptyTestSet("no rows to evaluate")
    if not normalizer > 0:
        raise ValueError("normalizer must be positive")
    pred = forward(model, X)
    return float(np.mean(np.abs(pred.reshape(Y.shape) - Y)) / normalizer)


def fold_normalization(model: ReluNet):
    """Return a copy whose weights act on physical units directly."""
    out = model.copy()
    if model.folded or model.norm is None:
        out.folded = True
        return out
    nm = model.norm
    if np.any(nm.y_scale <= 0):
        raise NegativeOutputScale("output scale factors must be positive to keep W^z >= 0")
    inv = 1.0 / nm.x_scale
    shift = nm.x_mean * inv
    for k, w in enumerate(out.wx):
        if w is None:
            continue
        out.b[k] = out.b[k] - w @ shift
        out.wx[k] = w * inv[None, :]
    s = nm.y_scale
    out.wz[-1] = out.wz[-1] * s[:, None]
    if out.wx[-1] is not None:
        out.wx[-1] = out.wx[-1] * s[:, None]
    out.b[-1] = out.b[-1] * s + nm.y_mean
    out.folded = True
    return out


# violation heads ---------------------------------------------------------------


@dataclass
class ViolationHead:
    """Fixed layer mapping network outputs ``y`` to ``1^T max(y + eps, 0)``."""

    kind: str
    eps: np.ndarray
    mask: np.ndarray  # positional bus / line indices the outputs cover

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.mask = np.asarray(self.mask, dtype=int)
        expected = {"loss": 1, "v": 2 * self.mask.size, "ol": self.mask.size, "rpf": self.mask.size}
        if self.kind not in expected:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.eps.size != expected[self.kind]:
            raise HeadLimitMismatch(f"{self.kind} head needs {expected[self.kind]} limits, got {self.eps.size}")

    @property
    def size(self):
        return self.eps.size


def make_head(kind, limits, mask=None):
    """Build the head for ``kind`` from current limits; mask selects buses or lines."""
    if kind == "loss":
        return ViolationHead("loss", np.zeros(1), np.zeros(0, dtype=int))
    n_lines = limits.i_max.size
    if mask is None:
        raise HeadLimitMismatch(f"{kind} head needs a bus/line mask")
    mask = np.asarray(mask, dtype=int)
    if kind == "v":
        k = mask.size
        return ViolationHead("v", np.concatenate([np.full(k, -limits.v_max), np.full(k, limits.v_min)]), mask)
    if mask.size and mask.max() >= n_lines:
        raise HeadLimitMismatch("line mask exceeds the number of limit entries")
    if kind == "ol":
        return ViolationHead("ol", -limits.i_max[mask], mask)
    if kind == "rpf":
        return ViolationHead("rpf", limits.p_min[mask], mask)
    raise ValueError(f"unknown head kind {kind!r}")


def violation(head: ViolationHead, y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != head.size:
        raise DimensionMismatch(f"{head.kind} head expects {head.size} outputs, got {y.shape[-1]}")
    return np.maximum(y + head.eps, 0.0).sum(axis=-1)


def head_targets(kind, mask, loss, v, i, p_flow):
    """Training targets in head-stacked form: loss, [V; -V], I, -P."""
    if kind == "loss":
        return np.asarray(loss, dtype=float).reshape(-1, 1)
    mask = np.asarray(mask, dtype=int)
    if kind == "v":
        return np.hstack([v[:, mask], -v[:, mask]])
    if kind == "ol":
        return i[:, mask]
    if kind == "rpf":
        return -p_flow[:, mask]
    raise ValueError(f"unknown head kind {kind!r}")


# LP embedding --------------------------------------------------------------------


def check_convex(model):
    if not isinstance(model, IcnnModel):
        raise NegativeZWeight("LP embedding needs an input-convex network")
    if min_z_weight(model) < 0:
        raise NegativeZWeight(f"feedforward weight {min_z_weight(model):.3e} is negative")


def add_relaxed_layers(p: LpProblem, model: ReluNet, x_vars, tag):
    """Add the epigraph rows z_k >= affine, z_k >= 0 for every hidden layer.

    ``model`` must be folded.  Returns (z_vars per layer, output map) where the
    output map is a list of (indices, coefficients, constant) describing the
    final affine layer in terms of LP variables.
    """
    x_vars = np.asarray(x_vars, dtype=int)
    zs = []
    prev = None
    for k in range(model.K):
        n_k = model.b[k].size
        z = p.add_vars(n_k, 0.0, math.inf, 0.0, group=f"{tag}.z{k + 1}")
        for i in range(n_k):
            idx = [z[i]]
            val = [1.0]
            if model.wx[k] is not None:
                idx.extend(x_vars)
                val.extend(-model.wx[k][i])
            if prev is not None:
                idx.extend(prev)
                val.extend(-model.wz[k - 1][i])
            p.add_row(idx, val, GE, model.b[k][i], name=f"{tag}.l{k + 1}[{i}]")
        zs.append(z)
        prev = z
    out = []
    K = model.K
    for o in range(model.output_dim):
        idx = list(prev)
        val = list(model.wz[K - 1][o])
        if model.wx[K] is not None:
            idx.extend(x_vars)
            val.extend(model.wx[K][o])
        out.append((np.array(idx, dtype=int), np.array(val), float(model.b[K][o])))
    return zs, out


def exact_inference_lp(model: IcnnModel, x, **lp_kw):
    """Evaluate the network by minimising the sum of outputs over relaxed layers."""
    check_convex(model)
    folded = fold_normalization(model)
    x = np.asarray(x, dtype=float)
    if x.size != folded.input_dim:
        raise DimensionMismatch(f"expected {folded.input_dim} inputs, got {x.size}")
    p = LpProblem()
    xv = p.add_vars(x.size, x, x, 0.0, group="x")
    _, out = add_relaxed_layers(p, folded, xv, "net")
    y = p.add_vars(folded.output_dim, -math.inf, math.inf, 1.0, group="y")
    for o, (idx, val, const) in enumerate(out):
        p.add_row(np.concatenate([[y[o]], idx]), np.concatenate([[1.0], -val]), GE, const)
    sol = solve_lp(p, **lp_kw)
    if not sol.optimal:
        raise SolverFailure(f"exact inference LP ended with status {sol.status.value}")
    return sol.x[y]


# persistence -------------------------------------------------------------------


def _arr(a):
    return None if a is None else a.tolist()


def model_to_dict(model: ReluNet):
    return {
        "kind": model.kind,
        "head_kind": model.head_kind,
        "input_dim": model.input_dim,
        "hidden": model.hidden,
        "output_dim": model.output_dim,
        "layers": [{"wx": _arr(model.wx[k]), "wz": _arr(model.wz[k - 1]) if k else None,
                    "b": model.b[k].tolist()} for k in range(model.K + 1)],
        "normalization": model.norm.to_dict() if model.norm is not None else None,
        "folded": model.folded,
        "head": {"mask": None if model.mask is None else [int(m) for m in model.mask],
                 "plan_fingerprint": model.plan_fingerprint},
        "training": model.training,
    }


def model_from_dict(d):
    try:
        cls = {"icnn": IcnnModel, "mlp": MlpModel}[d["kind"]]
        layers = d["layers"]
        wx = [None if L["wx"] is None else np.asarray(L["wx"], dtype=float) for L in layers]
        wz = [np.asarray(L["wz"], dtype=float) for L in layers[1:]]
        b = [np.asarray(L["b"], dtype=float) for L in layers]
        norm = Normalization.from_dict(d["normalization"]) if d.get("normalization") else None
        head = d.get("head", {})
        return cls(wx, wz, b, head_kind=d["head_kind"], norm=norm, folded=d["folded"],
                   mask=head.get("mask"), plan_fingerprint=head.get("plan_fingerprint"),
                   training=d.get("training", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"model file is malformed: {exc}") from exc


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(str(exc)) from exc
    return model_from_dict(d)


def model_fingerprint(model):
    return hashlib.sha256(json.dumps(model_to_dict(model), sort_keys=True).encode()).hexdigest()
