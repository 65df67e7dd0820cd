"""Convex fusion of per-pixel class distributions under weighted TV.

Minimizes, over per-pixel simplex distributions Q,

    E(Q) = lambda_total * sum_p KL(Q_p || g_p)
         + beta * sum_edges w_e * ||Q_p - Q_q||_1

with a primal-dual (Chambolle-Pock style) scheme: the dual variable lives
on the 4-neighbor edges and is box-projected to [-beta*w_e, +beta*w_e]
per class (the conjugate of the weighted l1 term), while the primal step
is an exact KL-plus-quadratic prox restricted to the simplex. The finite
difference operator D is unweighted (weights sit in the dual box), so its
operator norm obeys ||D||^2 <= 8 and sigma = tau = 1/sqrt(8) satisfies the
step-size condition regardless of the edge weights.

The per-pixel prox solves

    min_q  a * sum_k q_k log(q_k / g_k) + 1/2 * ||q - v||^2   s.t. q in simplex

by a safeguarded Newton/bisection search on the simplex multiplier nu;
for fixed nu each coordinate satisfies a*log(q/g) + a + q - v + nu = 0,
whose exact solution is a * omega((v - nu)/a - 1 + log(g/a)) with omega
the Wright omega function. The multiplier is located to 1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import wrightomega, xlogy

from .attention_fusion import ScoreMap
from .errors import NonFiniteEncountered, ShapeMismatch
from .resample import resize_plane
from .superpixels import EdgeWeightField

_STEP = 1.0 / np.sqrt(8.0)   # sigma = tau, with sigma*tau*||D||^2 = 1


@dataclass(frozen=True)
class ProbabilityField:
    """H x W x K per-pixel class distributions on the simplex."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise ShapeMismatch(f"expected H x W x K, got {v.shape}")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ShapeMismatch("probabilities must be finite and non-negative")
        sums = v.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise ShapeMismatch(
                f"pixel distributions must sum to 1, worst error "
                f"{np.abs(sums - 1.0).max():.3e}")

    @property
    def num_classes(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SolverParams:
    lambda_c: float = 1.0
    lambda_d: float = 0.2
    beta: float = 0.10
    max_iters: int = 500
    rel_tol: float = 1e-6
    softmax_temp: float = 1.0
    eps_floor: float = 1e-8

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_d < 0 or self.lambda_c + self.lambda_d <= 0:
            raise ValueError("need lambda_c, lambda_d >= 0 with a positive sum")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0 < self.eps_floor <= 1e-3:
            raise ValueError("eps_floor must lie in (0, 1e-3]")
        if self.max_iters < 1 or self.rel_tol <= 0 or self.softmax_temp <= 0:
            raise ValueError("max_iters >= 1, rel_tol > 0, softmax_temp > 0 required")


def scores_to_probs(s: ScoreMap, image_size: tuple[int, int], temp: float = 1.0,
                    eps_floor: float = 1e-8) -> ProbabilityField:
    """Upsample patch scores to pixels and soft-max them into distributions.

    Probabilities are floored at eps_floor and renormalized so the KL terms
    downstream never see log(0).
    """
    if temp <= 0:
        raise ValueError("softmax temperature must be positive")
    r, c = s.grid
    plane = resize_plane(s.values.astype(np.float64).reshape(r, c, -1), image_size)
    z = plane / temp
    z -= z.max(axis=2, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=2, keepdims=True)
    p = np.maximum(p, eps_floor)
    p /= p.sum(axis=2, keepdims=True)
    return ProbabilityField(values=p)


def collapse_kl_targets(a: ProbabilityField, b: ProbabilityField, lambda_c: float,
                        lambda_d: float) -> tuple[ProbabilityField, float]:
    """Fold two KL data terms into one.

    The normalized weighted geometric mean g of (a, b) satisfies
    lambda_c*KL(q||a) + lambda_d*KL(q||b) = (lambda_c+lambda_d)*KL(q||g) + const
    for every simplex q, so the solver only ever sees a single target.
    """
    if a.values.shape != b.values.shape:
        raise ShapeMismatch("probability fields differ in shape")
    total = lambda_c + lambda_d
    if total <= 0:
        raise ValueError("lambda_c + lambda_d must be positive")
    logmix = (lambda_c * np.log(a.values) + lambda_d * np.log(b.values)) / total
    logmix -= logmix.max(axis=2, keepdims=True)
    g = np.exp(logmix)
    g /= g.sum(axis=2, keepdims=True)
    return ProbabilityField(values=g), float(total)


def kl_simplex_prox(v: np.ndarray, g: np.ndarray, weight: float,
                    eps_floor: float = 1e-8, tol: float = 1e-10) -> np.ndarray:
    """prox of weight*KL(.||g) plus the simplex indicator at point v.

    `v` and `g` are (..., K); the solve vectorizes over all leading axes.
    """
    if weight <= 0:
        raise ValueError("prox weight must be positive")
    shape = v.shape
    v2 = np.asarray(v, dtype=np.float64).reshape(-1, shape[-1])
    g2 = np.asarray(g, dtype=np.float64).reshape(-1, shape[-1])
    a = float(weight)
    log_g_a = np.log(g2) - np.log(a)

    def q_of(nu):
        return a * wrightomega((v2 - nu[:, None]) / a - 1.0 + log_g_a)

    # bracket the multiplier: h(nu) = sum_k q_k(nu) - 1 is strictly decreasing
    lo = v2.max(axis=1) - 1.0
    hi = v2.max(axis=1) + 1.0
    step = 1.0
    for _ in range(200):
        need = q_of(lo).sum(axis=1) < 1.0
        if not need.any():
            break
        lo = np.where(need, lo - step, lo)
        step *= 2.0
    else:
        raise NonFiniteEncountered("could not bracket the simplex multiplier (low side)")
    step = 1.0
    for _ in range(200):
        need = q_of(hi).sum(axis=1) > 1.0
        if not need.any():
            break
        hi = np.where(need, hi + step, hi)
        step *= 2.0
    else:
        raise NonFiniteEncountered("could not bracket the simplex multiplier (high side)")

    x = 0.5 * (lo + hi)
    for _ in range(200):
        q = q_of(x)
        hx = q.sum(axis=1) - 1.0
        lo = np.where(hx > 0, x, lo)
        hi = np.where(hx > 0, hi, x)
        deriv = -(q / (a + q)).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = x - hx / deriv
        mid = 0.5 * (lo + hi)
        good = np.isfinite(cand) & (cand > lo) & (cand < hi)
        x = np.where(good, cand, mid)
        if (hi - lo).max() < tol:
            break
    q = np.maximum(q_of(x), eps_floor)
    q /= q.sum(axis=1, keepdims=True)
    return q.reshape(shape)


def tv_energy(q: np.ndarray, g: np.ndarray, lambda_total: float,
              w: EdgeWeightField, beta: float) -> float:
    """Objective value at a candidate field (arrays, H x W x K)."""
    data = (xlogy(q, q) - xlogy(q, g)).sum()
    dh = np.abs(q[:, 1:, :] - q[:, :-1, :]).sum(axis=2)
    dv = np.abs(q[1:, :, :] - q[:-1, :, :]).sum(axis=2)
    tv = (w.horizontal.astype(np.float64) * dh).sum() \
        + (w.vertical.astype(np.float64) * dv).sum()
    return float(lambda_total * data + beta * tv)


def _div_t(yh: np.ndarray, yv: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Adjoint of the forward-difference operator (negative divergence)."""
    out[:] = 0.0
    out[:, 1:, :] += yh
    out[:, :-1, :] -= yh
    out[1:, :, :] += yv
    out[:-1, :, :] -= yv
    return out


def solve_pdhg(g: ProbabilityField, lambda_total: float, w: EdgeWeightField,
               params: SolverParams, on_iteration=None) -> ProbabilityField:
    """Minimize the fused KL + weighted-TV energy over the simplex.

    Starts at Q = g with zero dual, stops after max_iters or once the mean
    absolute primal change stays below rel_tol for three iterations, and
    returns the best-energy iterate seen (which is never worse than g).
    `on_iteration(i, energy, change, q, yh, yv)` is invoked once per
    iteration when given; it powers the convergence log and the solver
    tests.
    """
    h, wd, k = g.values.shape
    if w.horizontal.shape != (h, max(wd - 1, 0)) or w.vertical.shape != (max(h - 1, 0), wd):
        raise ShapeMismatch(
            f"edge field {w.horizontal.shape}/{w.vertical.shape} does not match "
            f"image {h}x{wd}")
    gv = g.values.astype(np.float64)
    q = gv.copy()
    q_bar = q.copy()
    yh = np.zeros((h, max(wd - 1, 0), k))
    yv = np.zeros((max(h - 1, 0), wd, k))
    box_h = params.beta * w.horizontal.astype(np.float64)[:, :, None]
    box_v = params.beta * w.vertical.astype(np.float64)[:, :, None]
    scratch = np.empty_like(q)

    best_energy = tv_energy(q, gv, lambda_total, w, params.beta)
    best_q = q.copy()
    calm_iters = 0
    for it in range(1, params.max_iters + 1):
        yh = np.clip(yh + _STEP * (q_bar[:, 1:, :] - q_bar[:, :-1, :]), -box_h, box_h)
        yv = np.clip(yv + _STEP * (q_bar[1:, :, :] - q_bar[:-1, :, :]), -box_v, box_v)
        v = q - _STEP * _div_t(yh, yv, scratch)
        q_new = kl_simplex_prox(v, gv, _STEP * lambda_total, params.eps_floor)
        if not np.isfinite(q_new).all():
            raise NonFiniteEncountered(f"primal iterate diverged at iteration {it}")
        change = np.abs(q_new - q).sum() / (h * wd)
        q_bar = 2.0 * q_new - q
        q = q_new
        energy = tv_energy(q, gv, lambda_total, w, params.beta)
        if not np.isfinite(energy):
            raise NonFiniteEncountered(f"energy diverged at iteration {it}")
        if energy < best_energy:
            best_energy = energy
            best_q = q.copy()
        if on_iteration is not None:
            on_iteration(it, energy, change, q, yh, yv)
        calm_iters = calm_iters + 1 if change < params.rel_tol else 0
        if calm_iters >= 3:
            break
    return ProbabilityField(values=best_q)


def argmax_labels(q: ProbabilityField) -> np.ndarray:
    """Per-pixel most likely class; ties resolve to the lowest class index."""
    return np.argmax(q.values, axis=2).astype(np.int64)
