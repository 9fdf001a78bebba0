"""Monotone operator families a(x, y, xi) = m(x) * kappa(y) * |xi|^(p-2) * xi.

The microstructure kappa is Y-periodic; the macroscopic dependence m(x) is
either piecewise constant over strips of Omega (one kernel per strip) or a
Lipschitz modulation 1 + theta * g(x).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

KERNEL_KINDS = ("laminate", "checkerboard", "trig")
X_MODES = ("piecewise", "modulated")


class OperatorDomainError(ValueError):
    """Raised for non-finite or out-of-range operator arguments."""


class UnsupportedModeError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Periodic coefficient kappa(y) on Y = (0, 1)^n.

    ``laminate``: equal-width bands in y1 carrying ``values`` in order.
    ``checkerboard``: two values on a 2x2 checkerboard (a laminate in 1D).
    ``trig``: values ``(kmin, kmax)``, kappa = mid + half * prod_k sin(2 pi y_k).
    """

    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals or min(vals) <= 0 or not all(np.isfinite(vals)):
            raise ValueError("kernel values must be finite and positive")
        if self.kind == "checkerboard" and len(vals) != 2:
            raise ValueError("checkerboard kernel takes exactly two values")
        if self.kind == "trig" and (len(vals) != 2 or vals[0] > vals[1]):
            raise ValueError("trig kernel takes (kmin, kmax) with kmin <= kmax")

    @property
    def kmin(self) -> float:
        return min(self.values)

    @property
    def kmax(self) -> float:
        return max(self.values)

    @property
    def bands(self) -> int:
        """Number of equal cell-grid subdivisions per axis that align jumps."""
        if self.kind == "laminate":
            return len(self.values)
        if self.kind == "checkerboard":
            return 2
        return 1

    def __call__(self, y):
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        if self.kind == "laminate":
            idx = np.minimum((y[..., 0] * len(self.values)).astype(int), len(self.values) - 1)
            return np.asarray(self.values)[idx]
        if self.kind == "checkerboard":
            parity = np.sum(np.floor(2.0 * y).astype(int), axis=-1) % 2
            return np.where(parity == 0, self.values[0], self.values[1])
        mid = 0.5 * (self.values[0] + self.values[1])
        half = 0.5 * (self.values[1] - self.values[0])
        return mid + half * np.prod(np.sin(2.0 * np.pi * y), axis=-1)


@dataclass(frozen=True)
class OperatorSpec:
    """Structure data for one operator family.

    In piecewise mode ``kernels`` holds one kernel per strip
    Omega_i = {i/N <= x1 < (i+1)/N}. In modulated mode there is a single
    kernel and m(x) = 1 + theta * sin(L * (x1 + ... + xn) / sqrt(n)), whose
    Lipschitz constant is exactly L.
    """

    p: float
    kernels: tuple[Kernel, ...]
    n: int = 1
    x_mode: str = "piecewise"
    theta: float = 0.0
    lipschitz_L: float = 0.0
    alpha: float | None = None
    beta: float | None = None
    q: float = field(init=False)
    c1: float = field(init=False)
    c2: float = field(init=False)

    def __post_init__(self):
        p = float(self.p)
        if not (1.0 < p < np.inf):
            raise ValueError(f"p must lie in (1, inf), got {p}")
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or 2 is supported")
        if self.x_mode not in X_MODES:
            raise ValueError(f"unknown x_mode {self.x_mode!r}")
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValueError("at least one kernel is required")
        if self.x_mode == "modulated":
            if len(kernels) != 1:
                raise ValueError("modulated mode takes a single kernel")
            if not (0.0 <= self.theta < 1.0) or self.lipschitz_L < 0:
                raise ValueError("modulated mode needs 0 <= theta < 1 and L >= 0")
        elif self.theta != 0.0:
            raise ValueError("theta is only meaningful in modulated mode")
        alpha = min(1.0, p - 1.0) if self.alpha is None else float(self.alpha)
        beta = max(p, 2.0) if self.beta is None else float(self.beta)
        if not (0.0 <= alpha <= min(1.0, p - 1.0) + 1e-15):
            raise ValueError("alpha must satisfy 0 <= alpha <= min(1, p-1)")
        if beta < max(p, 2.0):
            raise ValueError("beta must satisfy beta >= max(p, 2)")
        set_ = object.__setattr__
        set_(self, "p", p)
        set_(self, "kernels", kernels)
        set_(self, "alpha", alpha)
        set_(self, "beta", beta)
        set_(self, "q", p / (p - 1.0))
        kmax = max(k.kmax for k in kernels)
        kmin = min(k.kmin for k in kernels)
        mmax, mmin = 1.0 + self.theta, 1.0 - self.theta
        # p-Laplacian structure constants (standard vector inequalities)
        if p >= 2.0:
            cont, mono = p - 1.0, 2.0 ** (2.0 - p)
        else:
            cont, mono = 2.0 ** (2.0 - p), p - 1.0
        set_(self, "c1", cont * kmax * mmax)
        set_(self, "c2", mono * kmin * mmin)

    @property
    def N(self) -> int:
        return len(self.kernels) if self.x_mode == "piecewise" else 1

    def subdomain(self, x) -> np.ndarray:
        """Strip index i of the points x (last axis = coordinates)."""
        x = np.asarray(x, dtype=float)
        return np.clip(np.floor(x[..., 0] * self.N).astype(int), 0, self.N - 1)

    def multiplier(self, x) -> np.ndarray:
        """m(x); identically 1 in piecewise mode."""
        x = np.asarray(x, dtype=float)
        if self.x_mode == "piecewise" or self.theta == 0.0:
            return np.ones(x.shape[:-1])
        s = np.sum(x, axis=-1) / np.sqrt(self.n)
        return 1.0 + self.theta * np.sin(self.lipschitz_L * s)

    def coefficient(self, x, y) -> np.ndarray:
        """Scalar weight m(x) * kappa_i(y) multiplying |xi|^(p-2) xi."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        if self.N == 1:
            kap = np.broadcast_to(self.kernels[0](y), shape)
        else:
            idx = np.broadcast_to(self.subdomain(x), shape)
            yb = np.broadcast_to(y, shape + (self.n,))
            kap = np.empty(shape)
            for i, ker in enumerate(self.kernels):
                sel = idx == i
                kap[sel] = ker(yb[sel])
        return self.multiplier(x) * kap

    def anchor_key(self, x) -> tuple:
        """Hashable identity of a(x, ., .) as a function of (y, xi)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.x_mode == "piecewise":
            return ("sub", int(self.subdomain(x)))
        return ("x",) + tuple(round(float(c), 12) for c in x)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernels"] = [{"kind": k.kind, "values": list(k.values)} for k in self.kernels]
        return d

    def spec_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise OperatorDomainError("non-finite operator argument")


def _power_weight(norm: np.ndarray, p: float) -> np.ndarray:
    """|xi|^(p-2), with the continuous extension of |xi|^(p-2) xi at 0."""
    out = np.zeros_like(norm)
    nz = norm > 0
    out[nz] = norm[nz] ** (p - 2.0)
    return out


def eval_a(spec: OperatorSpec, x, y, xi) -> np.ndarray:
    """Evaluate the flux a(x, y, xi); broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check_finite(x, y, xi)
    norm = np.linalg.norm(xi, axis=-1)
    w = spec.coefficient(x, y) * _power_weight(norm, spec.p)
    return w[..., None] * xi


def eval_a_jacobian(spec: OperatorSpec, x, y, xi, delta_reg: float = 1e-8) -> np.ndarray:
    """Regularized derivative d a / d xi, shape (..., n, n).

    Uses (|xi|^2 + delta_reg)^((p-2)/2) so the linearization stays finite at
    xi = 0 for p < 2 and nonsingular for p > 2. The flux itself is never
    regularized.
    """
    xi = np.asarray(xi, dtype=float)
    c = spec.coefficient(x, y)
    s2 = np.sum(xi * xi, axis=-1) + delta_reg
    w = c * s2 ** ((spec.p - 2.0) / 2.0)
    eye = np.eye(xi.shape[-1])
    outer = xi[..., :, None] * xi[..., None, :] / s2[..., None, None]
    return w[..., None, None] * (eye + (spec.p - 2.0) * outer)


def lagged_coefficient(spec: OperatorSpec, x, y, xi, delta_reg: float = 1e-8) -> np.ndarray:
    """Scalar Picard weight m kappa (|xi|^2 + delta)^((p-2)/2)."""
    xi = np.asarray(xi, dtype=float)
    s2 = np.sum(xi * xi, axis=-1) + delta_reg
    return spec.coefficient(x, y) * s2 ** ((spec.p - 2.0) / 2.0)


def modulus_omega(spec: OperatorSpec, d) -> np.ndarray:
    """Declared x-modulus omega(d) = (c1 * theta * L * d)^q, d >= 0."""
    if spec.x_mode != "modulated":
        raise UnsupportedModeError("modulus_omega requires modulated mode")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise OperatorDomainError("distance must be finite and nonnegative")
    return (spec.c1 * spec.theta * spec.lipschitz_L * d) ** spec.q


@dataclass
class StructureFit:
    c1_hat: float
    alpha_hat: float
    c2_hat: float
    beta_hat: float
    max_zero_violation: float
    c_a: float
    c_b: float
    sample_count: int
    seed: int


def _sample_points(spec: OperatorSpec, rng, count):
    x = rng.random((count, spec.n))
    y = rng.random((count, spec.n))
    return x, y


def _sample_xi(rng, count, n, scale=3.0):
    # log-uniform magnitudes over several decades, isotropic directions
    mag = 10.0 ** rng.uniform(-3, np.log10(scale) + 1, count)
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return mag[:, None] * d


def local_slopes(fun, bases, directions, steps) -> np.ndarray:
    """Log-log slope of fun(base, base + t*dir) against t, one per base."""
    logt = np.log(steps)
    out = []
    for b, d in zip(bases, directions):
        vals = np.array([fun(b, b + t * d) for t in steps])
        if np.any(vals <= 0):
            continue
        out.append(np.polyfit(logt, np.log(vals), 1)[0])
    return np.asarray(out)


def fit_structure_constants(spec: OperatorSpec, sample_count: int, rng_seed: int) -> StructureFit:
    """Envelope constants for the continuity/monotonicity conditions of a.

    c1_hat is the max of the continuity ratio at exponent alpha, c2_hat the
    min of the monotonicity ratio at exponent beta. alpha_hat (beta_hat) is
    the min (max) local log-log slope as xi2 -> xi1 over sampled base points
    including the origin, i.e. the worst-case local Hoelder/monotonicity
    exponent.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    rng = np.random.default_rng(rng_seed)
    n, p = spec.n, spec.p
    x, y = _sample_points(spec, rng, sample_count)
    xi1 = _sample_xi(rng, sample_count, n)
    # mix of near pairs and far pairs
    near = rng.random(sample_count) < 0.5
    xi2 = np.where(near[:, None], xi1 + 10.0 ** rng.uniform(-4, -1, (sample_count, 1))
                   * rng.standard_normal((sample_count, n)), _sample_xi(rng, sample_count, n))
    dist = np.linalg.norm(xi1 - xi2, axis=1)
    keep = dist > 0
    if not np.any(keep):
        raise ValueError("degenerate sampling: all pairs coincide")
    x, y, xi1, xi2, dist = x[keep], y[keep], xi1[keep], xi2[keep], dist[keep]
    a1 = eval_a(spec, x, y, xi1)
    a2 = eval_a(spec, x, y, xi2)
    base = 1.0 + np.linalg.norm(xi1, axis=1) + np.linalg.norm(xi2, axis=1)
    cont = np.linalg.norm(a1 - a2, axis=1) / (base ** (p - 1 - spec.alpha) * dist ** spec.alpha)
    mono = np.sum((a1 - a2) * (xi1 - xi2), axis=1) / (base ** (p - spec.beta) * dist ** spec.beta)

    # local exponents at a handful of base points plus the origin
    nb = 16
    xb, yb = _sample_points(spec, rng, nb)
    # away from the origin keep |base| >> step so each slope sees a single regime
    rad = 10.0 ** rng.uniform(-1, 1, (nb - 1, 1))
    unit = rng.standard_normal((nb - 1, n))
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    bases = np.vstack([np.zeros((1, n)), rad * unit])
    dirs = rng.standard_normal((nb, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    steps = np.logspace(-6, -3, 7)

    def cont_gap(i):
        return lambda u, v: float(np.linalg.norm(eval_a(spec, xb[i], yb[i], u) - eval_a(spec, xb[i], yb[i], v)))

    def mono_gap(i):
        return lambda u, v: float(np.dot(eval_a(spec, xb[i], yb[i], u) - eval_a(spec, xb[i], yb[i], v), u - v))

    a_slopes = np.concatenate([local_slopes(cont_gap(i), bases[i:i + 1], dirs[i:i + 1], steps) for i in range(nb)])
    b_slopes = np.concatenate([local_slopes(mono_gap(i), bases[i:i + 1], dirs[i:i + 1], steps) for i in range(nb)])

    zero = eval_a(spec, x, y, np.zeros_like(xi1))
    xi_all = np.vstack([xi1, xi2])
    xy = np.vstack([x, x]), np.vstack([y, y])
    a_all = eval_a(spec, xy[0], xy[1], xi_all)
    nrm = np.linalg.norm(xi_all, axis=1)
    c_a = np.max(np.linalg.norm(a_all, axis=1) / (1.0 + nrm ** (p - 1)))
    c_b = np.max(nrm ** p / (1.0 + np.sum(a_all * xi_all, axis=1)))
    return StructureFit(
        c1_hat=float(np.max(cont)),
        alpha_hat=float(np.min(a_slopes)),
        c2_hat=float(np.min(mono)),
        beta_hat=float(np.max(b_slopes)),
        max_zero_violation=float(np.max(np.abs(zero))),
        c_a=float(c_a),
        c_b=float(c_b),
        sample_count=int(keep.sum()),
        seed=int(rng_seed),
    )
