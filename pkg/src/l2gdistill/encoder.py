"""Two-layer MLP encoder with batch norm and L2 output normalization.

    x -> W1, b1 -> tanh -> W2, b2 -> batchnorm (no affine) -> l2 normalize

Forward and backward are written out by hand; ``backward`` returns exact
gradients through the batch statistics and the normalization Jacobian.
Also here: Adam with step decay and decoupled weight decay, and the EMA
rule that moves a teacher toward the student.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchitectureError, BatchTooSmall, DimensionError, GradientError

PARAM_NAMES = ("W1", "b1", "W2", "b2")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class EncoderState:
    params: dict
    running_mean: np.ndarray
    running_var: np.ndarray

    @property
    def dims(self):
        return (self.params["W1"].shape[0], self.params["W1"].shape[1], self.params["W2"].shape[1])

    def copy(self):
        return copy.deepcopy(self)


def init_encoder(rng, d_raw=32, hidden=64, d_emb=16, input_scale=1.0, whiten=None):
    """Gaussian fan-in initialization.

    ``input_scale`` is the typical RMS of an input coordinate, so first-layer
    pre-activations start near unit variance instead of saturating the tanh.
    ``whiten`` optionally gives ``(mean, W)`` of a whitening transform that
    the first layer is composed with: ``W1 = W @ G``, ``b1 = -mean @ W1``.
    """
    g = rng.standard_normal((d_raw, hidden)) / np.sqrt(d_raw)
    if whiten is None:
        w1, b1 = g / input_scale, np.zeros(hidden)
    else:
        mean, w = whiten
        w1 = w @ g
        b1 = -np.asarray(mean) @ w1
    params = {
        "W1": w1,
        "b1": b1,
        "W2": rng.standard_normal((hidden, d_emb)) / np.sqrt(hidden),
        "b2": np.zeros(d_emb),
    }
    return EncoderState(params, np.zeros(d_emb), np.ones(d_emb))


def forward(state, x, mode="train", update_running=True):
    """Embed the rows of ``x``.  Returns ``(embeddings, cache)``.

    Train mode normalizes with batch statistics and (unless
    ``update_running`` is False) folds them into the running averages.
    Inference mode uses the running statistics and is read-only.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p = state.params
    if x.shape[0] == 0:
        raise DimensionError("empty batch")
    if x.shape[1] != p["W1"].shape[0]:
        raise DimensionError(f"input dim {x.shape[1]} != encoder input dim {p['W1'].shape[0]}")
    h = np.tanh(x @ p["W1"] + p["b1"])
    z = h @ p["W2"] + p["b2"]
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("train-mode batch norm needs at least 2 rows")
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        if update_running:
            n = x.shape[0]
            state.running_mean = (1 - BN_MOMENTUM) * state.running_mean + BN_MOMENTUM * mu
            # unbiased variance for the running estimate, as torch does
            state.running_var = (1 - BN_MOMENTUM) * state.running_var + BN_MOMENTUM * var * n / (n - 1)
    elif mode == "inference":
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    y = (z - mu) * inv_std
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    out = y / norm
    cache = {"mode": mode, "x": x, "h": h, "y": y, "inv_std": inv_std, "norm": norm, "out": out,
             "W2": p["W2"].copy()}
    return out, cache


def backward(cache, grad_out):
    """Parameter gradients given dL/d(embeddings).  Needs a train-mode cache."""
    if cache["mode"] != "train":
        raise ValueError("backward needs a cache from a train-mode forward")
    g = np.asarray(grad_out, dtype=np.float64)
    out = cache["out"]
    if g.shape != out.shape:
        raise DimensionError(f"upstream gradient shape {g.shape} != output shape {out.shape}")
    n = g.shape[0]
    # l2 normalization: (I - q q^T) / ||y|| applied row-wise
    gy = (g - out * np.sum(g * out, axis=1, keepdims=True)) / cache["norm"]
    # batch norm through batch mean and variance
    y = cache["y"]
    gz = cache["inv_std"] / n * (n * gy - gy.sum(axis=0) - y * np.sum(gy * y, axis=0))
    h = cache["h"]
    grads = {"W2": h.T @ gz, "b2": gz.sum(axis=0)}
    gh = gz @ cache["W2"].T
    ga = gh * (1.0 - h * h)
    grads["W1"] = cache["x"].T @ ga
    grads["b1"] = ga.sum(axis=0)
    return grads


@dataclass
class OptimizerState:
    base_lr: float = 3.5e-4
    weight_decay: float = 5e-4
    step_size: int = 30
    decay: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, epoch):
        return self.base_lr * self.decay ** (epoch // self.step_size)


def adam_step(opt, params, grads, epoch):
    """One Adam update of ``params`` in place (decoupled weight decay)."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise GradientError(name)
        if grad.shape != params[name].shape:
            raise DimensionError(f"gradient shape mismatch for {name}")
    opt.step += 1
    lr = opt.lr_at(epoch)
    b1, b2 = opt.betas
    for name, grad in grads.items():
        m = opt.m.get(name, np.zeros_like(grad))
        v = opt.v.get(name, np.zeros_like(grad))
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        opt.m[name], opt.v[name] = m, v
        m_hat = m / (1 - b1 ** opt.step)
        v_hat = v / (1 - b2 ** opt.step)
        p = params[name]
        p -= lr * (m_hat / (np.sqrt(v_hat) + opt.eps) + opt.weight_decay * p)
    return params


def ema_update(teacher, student, lam):
    """teacher <- lam * teacher + (1 - lam) * student, including BN running stats."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"EMA coefficient must lie in [0, 1], got {lam}")
    if teacher.dims != student.dims:
        raise ArchitectureError(f"teacher dims {teacher.dims} != student dims {student.dims}")
    if lam == 1.0:
        return teacher
    for name in PARAM_NAMES:
        if lam == 0.0:
            teacher.params[name] = student.params[name].copy()
        else:
            teacher.params[name] = lam * teacher.params[name] + (1 - lam) * student.params[name]
    if lam == 0.0:
        teacher.running_mean = student.running_mean.copy()
        teacher.running_var = student.running_var.copy()
    else:
        teacher.running_mean = lam * teacher.running_mean + (1 - lam) * student.running_mean
        teacher.running_var = lam * teacher.running_var + (1 - lam) * student.running_var
    return teacher


def whitening(raw, shrink=0.0, floor=1e-6):
    """PCA whitening ``(mean, W)`` such that ``(raw - mean) @ W`` has identity covariance.

    ``shrink > 0`` adds ``shrink * mean eigenvalue`` to every eigenvalue
    before inverting, so low-variance (noise-only) directions are not blown
    up to unit scale.
    """
    raw = np.asarray(raw, dtype=np.float64)
    mean = raw.mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(raw, rowvar=False))
    evals = np.maximum(evals, 0.0)
    return mean, evecs / np.sqrt(evals + shrink * evals.mean() + floor)


def embed(state, x, batch_size=1024):
    """Inference-mode embeddings of all rows of ``x``."""
    x = np.atleast_2d(x)
    return np.vstack([forward(state, x[i:i + batch_size], "inference")[0]
                      for i in range(0, len(x), batch_size)])
