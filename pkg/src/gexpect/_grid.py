"""Grid stencils for the substep maximization scheme.

One substep maps v to ``max_gamma sum_j w_j v(x + sqrt(delta) gamma^{1/2} z_j)``
with Gauss-Hermite nodes z_j.  On a uniform grid with linear (bilinear in 2-d)
interpolation and constant extrapolation, each scenario's inner sum is a fixed
sparse stencil of nonnegative weights, which keeps the scheme monotone,
constant preserving and sublinear in v.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage, stats


@lru_cache(maxsize=32)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite rule with weights normalized to sum 1."""
    z, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def _linear_taps(c: np.ndarray, w: np.ndarray):
    """Split offsets c (in grid units) into the two neighbouring nodes."""
    m = np.floor(c)
    th = c - m
    offs = np.concatenate([m, m + 1]).astype(np.int64)
    wts = np.concatenate([w * (1.0 - th), w * th])
    return offs, wts


def _stencil_variance(s: float, z, w, h: float) -> float:
    offs, wts = _linear_taps(s * z / h, w)
    return float(np.sum(wts * offs.astype(float) ** 2)) * h * h


def _matched_scale(s: float, z, w, h: float) -> float:
    """Scale s' <= s whose interpolated stencil has variance exactly s**2.

    Linear interpolation inflates the stencil variance by h^2 theta(1-theta)
    per node; the inflated variance is continuous and increasing in the
    scale, so bisection finds the matching scale.
    """
    target = s * s
    lo, hi = 0.0, s
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _stencil_variance(mid, z, w, h) < target:
            lo = mid
        else:
            hi = mid
    return lo if abs(_stencil_variance(lo, z, w, h) - target) <= abs(_stencil_variance(hi, z, w, h) - target) else hi


def stencil_1d(variance: float, h: float, n_nodes: int, moment_match: bool = True):
    """Sparse stencil (offsets, weights) for one substep of total variance ``variance``."""
    if variance <= 0.0:
        return np.zeros(1, dtype=np.int64), np.ones(1)
    z, w = gauss_hermite(n_nodes)
    s = float(np.sqrt(variance))
    if moment_match:
        s = _matched_scale(s, z, w, h)
    offs, wts = _linear_taps(s * z / h, w)
    uniq, inv = np.unique(offs, return_inverse=True)
    agg = np.bincount(inv, weights=wts)
    keep = agg > 0.0
    return uniq[keep], agg[keep]


def _axis_moment(c: np.ndarray, W: np.ndarray, h: float) -> float:
    """Second moment of the linearly interpolated taps along one axis."""
    u = c / h
    m = np.floor(u)
    th = u - m
    return float(np.sum(W * ((1.0 - th) * m * m + th * (m + 1.0) ** 2))) * h * h


def _axis_scale(c: np.ndarray, W: np.ndarray, h: float, target: float) -> float:
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _axis_moment(mid * c, W, h) < target:
            lo = mid
        else:
            hi = mid
    return hi


def _sym_sqrt(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(M)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def stencil_2d(gamma: np.ndarray, delta: float, hs, n_nodes: int, prune: float = 1e-16,
               moment_match: bool = True):
    """Bilinear stencil for a 2-d substep with covariance ``delta * gamma``.

    With ``moment_match`` each axis of the node cloud is shrunk so that the
    interpolated second moments equal ``delta * gamma`` exactly; the
    off-diagonal entry is corrected for the shrinkage by a short fixed-point
    iteration (bilinear interpolation reproduces x1 * x2 exactly).
    """
    z, w = gauss_hermite(n_nodes)
    Z = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w, w).ravel()
    gamma = np.asarray(gamma, dtype=float)
    scale = np.ones(2)
    work = gamma.copy()
    for _ in range(8 if moment_match else 1):
        C = np.sqrt(delta) * Z @ _sym_sqrt(work).T
        if not moment_match:
            break
        scale = np.array([_axis_scale(C[:, i], W, hs[i], delta * gamma[i, i]) if gamma[i, i] > 0 else 1.0
                          for i in range(2)])
        off = gamma[0, 1] / (scale[0] * scale[1])
        bound = np.sqrt(gamma[0, 0] * gamma[1, 1])
        work = np.array([[gamma[0, 0], np.clip(off, -bound, bound)],
                         [np.clip(off, -bound, bound), gamma[1, 1]]])
    C = C * scale
    c1 = C[:, 0] / hs[0]
    c2 = C[:, 1] / hs[1]
    m1, m2 = np.floor(c1), np.floor(c2)
    t1, t2 = c1 - m1, c2 - m2
    offs = []
    wts = []
    for a, wa in ((0, 1.0 - t1), (1, t1)):
        for b, wb in ((0, 1.0 - t2), (1, t2)):
            offs.append(np.stack([m1 + a, m2 + b], axis=1))
            wts.append(W * wa * wb)
    offs = np.concatenate(offs).astype(np.int64)
    wts = np.concatenate(wts)
    uniq, inv = np.unique(offs, axis=0, return_inverse=True)
    agg = np.bincount(inv.ravel(), weights=wts)
    keep = agg > prune * agg.max()
    agg = agg[keep]
    return uniq[keep], agg / agg.sum()


def stencil_hat(variance: float, h: float, cutoff: float = 1e-18):
    """Exact Gaussian integration of the piecewise-linear interpolant.

    Weight k is E[hat(sZ/h - k)] with hat(t) = max(0, 1 - |t|); the hat is
    the second difference of the ramp t -> t^+, so each weight is a second
    difference of Gaussian call prices.
    """
    if variance <= 0.0:
        return np.zeros(1, dtype=np.int64), np.ones(1)
    a = float(np.sqrt(variance)) / h
    kmax = int(np.ceil(a * 9.0)) + 2
    k = np.arange(0, kmax + 1, dtype=float)

    def ramp(c):
        return a * stats.norm.pdf(c / a) - c * stats.norm.sf(c / a)

    half = ramp(k - 1.0) - 2.0 * ramp(k) + ramp(k + 1.0)
    half = np.clip(half, 0.0, None)
    wts = np.concatenate([half[:0:-1], half])
    offs = np.arange(-kmax, kmax + 1, dtype=np.int64)
    keep = wts > cutoff * wts.max()
    offs, wts = offs[keep], wts[keep]
    return offs, wts / wts.sum()


def apply_stencil(values: np.ndarray, offs: np.ndarray, wts: np.ndarray, d: int) -> np.ndarray:
    """sum_k w_k v(x + o_k h) over the trailing ``d`` axes, edge values held constant."""
    if d == 1:
        n = values.shape[-1]
        if offs.size > 64 and np.array_equal(offs, np.arange(offs[0], offs[-1] + 1)) and offs[0] == -offs[-1]:
            return ndimage.correlate1d(values, wts, axis=-1, mode="nearest")
        P = int(np.max(np.abs(offs)))
        pad = [(0, 0)] * (values.ndim - 1) + [(P, P)]
        padded = np.pad(values, pad, mode="edge") if P else values
        out = np.zeros_like(values)
        for o, wt in zip(offs, wts):
            out += wt * padded[..., P + o: P + o + n]
        return out
    n1, n2 = values.shape[-2:]
    P1 = int(np.max(np.abs(offs[:, 0])))
    P2 = int(np.max(np.abs(offs[:, 1])))
    pad = [(0, 0)] * (values.ndim - 2) + [(P1, P1), (P2, P2)]
    padded = np.pad(values, pad, mode="edge")
    out = np.zeros_like(values)
    for (o1, o2), wt in zip(offs, wts):
        out += wt * padded[..., P1 + o1: P1 + o1 + n1, P2 + o2: P2 + o2 + n2]
    return out


def transform(values: np.ndarray, stencils, substeps: int, d: int, record: bool = False,
              first=None):
    """Apply ``substeps`` maximizing substeps; optionally keep per-substep argmax.

    ``stencils`` holds one (offsets, weights) pair per covariance in the set;
    ``first``, if given, replaces them for the first backward substep.  The
    returned argmax list is ordered from the first backward substep.
    """
    choices = []
    for step in range(substeps):
        current = first if (step == 0 and first is not None) else stencils
        best = None
        arg = None
        for g, (offs, wts) in enumerate(current):
            cand = apply_stencil(values, offs, wts, d)
            if best is None:
                best = cand
                if record:
                    arg = np.zeros(cand.shape, dtype=np.int64)
            else:
                if record:
                    arg = np.where(cand > best, g, arg)
                best = np.maximum(best, cand)
        values = best
        if record:
            choices.append(arg)
    return (values, choices) if record else values
