"""Numeric kernels for the contrastive restoration objective.

Everything here works on plain arrays supplied by the caller (discriminator
scores, projected feature stacks, images); there is no network or autograd.
Analytic gradients are provided for the InfoNCE query and the identity-loss
prediction so they can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class LossWeights:
    lambda_gan: float = 1.0
    lambda_nce: float = 1.0
    lambda_idt: float = 10.0
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        for name in ("lambda_gan", "lambda_nce", "lambda_idt"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be > 0, got {self.tau}")


def _scores(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


# ------------------------------------------------------------------ adversarial


def lsgan_loss(real_scores, fake_scores, variant: str = "literal") -> float:
    """Least-squares adversarial loss.

    ``variant="literal"`` evaluates ``mean(D(y)^2) + mean((1 - D(G(x)))^2)``
    exactly as the objective is usually printed.  ``"discriminator"`` and
    ``"generator"`` give the conventional LSGAN split, see
    :func:`lsgan_d_loss` and :func:`lsgan_g_loss`.
    """
    if variant == "literal":
        real = _scores(real_scores, "real_scores")
        fake = _scores(fake_scores, "fake_scores")
        return float(np.mean(real**2) + np.mean((1.0 - fake) ** 2))
    if variant == "discriminator":
        return lsgan_d_loss(real_scores, fake_scores)
    if variant == "generator":
        return lsgan_g_loss(fake_scores)
    raise ValueError(f"unknown lsgan variant {variant!r}")


def lsgan_d_loss(real_scores, fake_scores) -> float:
    """Conventional discriminator loss: real pushed to 1, fake to 0."""
    real = _scores(real_scores, "real_scores")
    fake = _scores(fake_scores, "fake_scores")
    return float(np.mean((real - 1.0) ** 2) + np.mean(fake**2))


def lsgan_g_loss(fake_scores) -> float:
    fake = _scores(fake_scores, "fake_scores")
    return float(np.mean((fake - 1.0) ** 2))


# ---------------------------------------------------------------------- InfoNCE


def _unit(x: np.ndarray, name: str = "vector") -> tuple[np.ndarray, float]:
    """Unit vector(s) along the last axis plus the norm; overflow-safe."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    scale = np.max(np.abs(x), axis=-1, keepdims=True)
    if np.any(scale == 0):
        raise ValueError(f"{name} has zero norm; cosine similarity undefined")
    y = x / scale
    n = np.sqrt(np.sum(y * y, axis=-1, keepdims=True))
    return y / n, scale * n


def _logsumexp(z: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(z - m), axis=axis))


def _prepare(v, v_pos, v_negs):
    v = np.asarray(v, dtype=float)
    v_pos = np.asarray(v_pos, dtype=float)
    negs = np.asarray(v_negs, dtype=float)
    if negs.ndim == 1:
        negs = negs[None, :]
    if v.ndim != 1 or v_pos.shape != v.shape:
        raise ValueError(f"query and positive must be equal-length vectors, got {v.shape} and {v_pos.shape}")
    if negs.ndim != 2 or negs.shape[0] < 1 or negs.shape[1] != v.shape[0]:
        raise ValueError(f"negatives must be N x {v.shape[0]} with N >= 1, got {negs.shape}")
    return v, v_pos, negs


def _infonce_parts(v, v_pos, v_negs, tau):
    if not tau > 0:
        raise ValueError("tau must be > 0")
    v, v_pos, negs = _prepare(v, v_pos, v_negs)
    q, qnorm = _unit(v, "query")
    keys, _ = _unit(np.vstack([v_pos, negs]), "positive/negatives")
    cos = keys @ q
    logits = cos / tau
    return q, float(qnorm[0]), keys, cos, logits


def infonce(v, v_pos, v_negs, tau: float = DEFAULT_TAU) -> float:
    """(N+1)-way cross-entropy picking the positive over N negatives.

    Similarities are cosines scaled by ``1/tau``; the softmax is evaluated
    with log-sum-exp so arbitrarily scaled inputs stay finite.
    """
    *_, logits = _infonce_parts(v, v_pos, v_negs, tau)
    return float(_logsumexp(logits) - logits[0])


def infonce_grad(v, v_pos, v_negs, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Gradient of :func:`infonce` with respect to the query ``v``."""
    q, qnorm, keys, cos, logits = _infonce_parts(v, v_pos, v_negs, tau)
    prob = np.exp(logits - _logsumexp(logits))
    coef = prob.copy()
    coef[0] -= 1.0
    # d cos_i / d v = (k_i - cos_i q) / |v|
    return (coef @ (keys - cos[:, None] * q[None, :])) / (tau * qnorm)


# --------------------------------------------------------------------- PatchNCE


class FeatureStack:
    """Per-layer ``S_l x C_l`` feature matrices of one image."""

    def __init__(self, layers: Sequence):
        mats = [np.asarray(m, dtype=float) for m in layers]
        if not mats:
            raise ValueError("feature stack needs at least one layer")
        for i, m in enumerate(mats):
            if m.ndim != 2:
                raise ValueError(f"layer {i}: expected an S x C matrix, got shape {m.shape}")
            if m.shape[0] < 2:
                raise ValueError(f"layer {i}: needs at least 2 locations, got {m.shape[0]}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"layer {i}: non-finite features")
        self.layers = mats

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [m.shape for m in self.layers]

    def to_json(self) -> str:
        doc = {"layers": [{"s": m.shape[0], "c": m.shape[1], "data": m.ravel().tolist()} for m in self.layers]}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "FeatureStack":
        doc = json.loads(text)
        layers = []
        for i, entry in enumerate(doc["layers"]):
            s, c, data = int(entry["s"]), int(entry["c"]), entry["data"]
            if len(data) != s * c:
                raise ValueError(f"layer {i}: data has {len(data)} values, expected s*c = {s * c}")
            layers.append(np.asarray(data, dtype=float).reshape(s, c))
        return cls(layers)

    @classmethod
    def random(cls, rng: np.random.Generator, shapes) -> "FeatureStack":
        return cls([rng.standard_normal(shape) for shape in shapes])


def _stack(x) -> FeatureStack:
    return x if isinstance(x, FeatureStack) else FeatureStack(x)


def check_stack_shapes(features_x, features_gx) -> None:
    fx, fg = _stack(features_x), _stack(features_gx)
    if len(fx) != len(fg):
        raise ValueError(f"stacks have {len(fx)} and {len(fg)} layers")
    for i, (a, b) in enumerate(zip(fx.shapes, fg.shapes)):
        if a != b:
            raise ValueError(f"layer {i}: shape mismatch {a} vs {b}")


def patchnce_terms(features_x, features_gx, tau: float = DEFAULT_TAU) -> list[np.ndarray]:
    """Per-layer vectors of InfoNCE terms, one per spatial location."""
    fx, fg = _stack(features_x), _stack(features_gx)
    check_stack_shapes(fx, fg)
    if not tau > 0:
        raise ValueError("tau must be > 0")
    out = []
    for x, gx in zip(fx, fg):
        keys, _ = _unit(x, "features_x")
        queries, _ = _unit(gx, "features_gx")
        logits = (queries @ keys.T) / tau
        out.append(_logsumexp(logits, axis=1) - np.diag(logits))
    return out


def patchnce(features_x, features_gx, tau: float = DEFAULT_TAU) -> float:
    """Sum over layers and locations of InfoNCE terms.

    The query at location ``s`` comes from ``features_gx``; its positive is the
    same location in ``features_x`` and the negatives are every other location
    of that layer in ``features_x``.  Layer sums are accumulated left to right.
    """
    total = 0.0
    for terms in patchnce_terms(features_x, features_gx, tau):
        total += float(np.sum(terms))
    return total


# --------------------------------------------------------------------- identity


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def identity_l1(gy, y) -> float:
    gy, y = _pair(gy, y)
    return float(np.mean(np.abs(gy - y)))


def identity_l1_grad(gy, y) -> np.ndarray:
    gy, y = _pair(gy, y)
    return np.sign(gy - y) / gy.size


# -------------------------------------------------------------------- objective


def full_objective(gan: float, nce: float, idt: float, weights: LossWeights = LossWeights()) -> float:
    parts = (gan, nce, idt)
    if not all(math.isfinite(x) for x in parts):
        raise ValueError(f"loss components must be finite, got {parts}")
    return weights.lambda_gan * gan + weights.lambda_nce * nce + weights.lambda_idt * idt


# ------------------------------------------------------------- gradient checks


class NonDifferentiablePoint(ValueError):
    pass


def numerical_grad(f: Callable[[np.ndarray], float], x, eps: float) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(analytic, numeric, floor: float = 0.0) -> float:
    """Largest component deviation relative to the gradient's max magnitude.

    ``floor`` bounds the denominator from below so that a vanishing gradient
    (e.g. at a symmetric point) is not judged on round-off alone.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def grad_check(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x,
    eps: float,
    floor: float = 0.0,
) -> float:
    """Max relative deviation between ``grad(x)`` and central differences of ``f``."""
    return relative_error(grad(np.asarray(x, dtype=float)), numerical_grad(f, x, eps), floor)


def grad_check_infonce(v, v_pos, v_negs, tau: float = DEFAULT_TAU, eps: float = 1e-6, min_norm: float = 1e-8) -> float:
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(np.vstack([v, v_pos, np.atleast_2d(v_negs)]), axis=1)
    if np.any(norms < min_norm):
        raise NonDifferentiablePoint(f"vector norm below {min_norm}; cosine not differentiable")
    # step proportional to |v| so the check is scale-free
    h = eps * float(norms[0])
    return grad_check(
        lambda q: infonce(q, v_pos, v_negs, tau),
        lambda q: infonce_grad(q, v_pos, v_negs, tau),
        v,
        h,
        # gradient components are O(1 / (tau |v|)); judge tiny ones against that unit
        floor=1e-6 / (tau * float(norms[0])),
    )


def grad_check_identity(gy, y, eps: float = 1e-5) -> float:
    gy, y = _pair(gy, y)
    if np.any(np.abs(gy - y) <= eps):
        raise NonDifferentiablePoint("a residual lies within eps of zero (kink of |.|)")
    return grad_check(lambda p: identity_l1(p, y), lambda p: identity_l1_grad(p, y), gy, eps)
