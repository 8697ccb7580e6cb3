"""Plant and barrier abstractions shared by all safety filters.

The plant is control-affine with a separate disturbance channel,

    xdot = f(x) + g1(x) u + g2(x) d,

and the safe set is the zero-superlevel set of a barrier function h.
For barriers of relative degree r >= 2 the user supplies closed-form
Lie-derivative callbacks; a finite-difference validator is provided so
scenarios can check them against the plant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """A callback or input does not match the declared dimensions."""


class ParameterError(ValueError):
    """A tuning parameter violates its validity condition."""


class ConfigurationError(ValueError):
    """A required callback or field is missing for the requested operation."""


def as_vector(v, dim: int, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float array of the declared dimension."""
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (dim,):
        raise DimensionError(f"{name}: expected dimension {dim}, got shape {np.shape(v)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries {arr}")
    return arr


def as_matrix(mat, rows: int, cols: int, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(mat, dtype=float).reshape(rows, cols) if np.size(mat) == rows * cols \
        else np.asarray(mat, dtype=float)
    if arr.shape != (rows, cols):
        raise DimensionError(f"{name}: expected shape ({rows}, {cols}), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ControlAffineSystem:
    """Control-affine plant with a disturbance input channel.

    f maps state -> (n,), g1 maps state -> (n, m), g2 maps state -> (n, p).
    `terms`, when given, returns all three in one call; simulators use it to
    avoid recomputing shared quantities (e.g. the inertia matrix of an arm).
    Callbacks must be pure and deterministic.
    """

    n: int
    m: int
    p: int
    f: Callable[[np.ndarray], np.ndarray]
    g1: Callable[[np.ndarray], np.ndarray]
    g2: Callable[[np.ndarray], np.ndarray]
    terms: Callable[[np.ndarray], tuple] | None = None

    def __post_init__(self):
        if min(self.n, self.m, self.p) < 1:
            raise ParameterError("system dimensions must be positive")

    def drift(self, x) -> np.ndarray:
        return as_vector(self.f(x), self.n, "f(x)")

    def input_matrix(self, x) -> np.ndarray:
        return as_matrix(self.g1(x), self.n, self.m, "g1(x)")

    def disturbance_matrix(self, x) -> np.ndarray:
        return as_matrix(self.g2(x), self.n, self.p, "g2(x)")

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(f, g1, g2) at x, using the fused callback when available."""
        if self.terms is not None:
            fx, G1, G2 = self.terms(x)
            return (as_vector(fx, self.n, "f(x)"),
                    as_matrix(G1, self.n, self.m, "g1(x)"),
                    as_matrix(G2, self.n, self.p, "g2(x)"))
        return self.drift(x), self.input_matrix(x), self.disturbance_matrix(x)


@dataclass(frozen=True)
class BarrierSpec:
    """Barrier function h with its derivatives and pole placement.

    For relative degree 1 only `h` and `grad_h` are needed.  For r >= 2 the
    chained drift derivatives `lie_f[k-1] = L_f^k h` (k = 1..r) and the mixed
    derivatives L_{g1} L_f^{r-1} h, L_{g2} L_f^{r-1} h must be supplied, along
    with r positive pole magnitudes (the constraint polynomial has roots at
    minus each pole).
    """

    h: Callable[[np.ndarray], float]
    grad_h: Callable[[np.ndarray], np.ndarray]
    relative_degree: int = 1
    lie_f: tuple | None = None
    lie_g1_fr: Callable[[np.ndarray], np.ndarray] | None = None
    lie_g2_fr: Callable[[np.ndarray], np.ndarray] | None = None
    poles: tuple = ()

    def __post_init__(self):
        r = self.relative_degree
        if r < 1:
            raise ParameterError(f"relative degree must be >= 1, got {r}")
        if any(lam <= 0 for lam in self.poles):
            raise ParameterError(f"all poles must be positive, got {self.poles}")
        if r >= 2:
            if len(self.poles) != r:
                raise ConfigurationError(f"need {r} poles for relative degree {r}")
            if self.lie_f is None or len(self.lie_f) < r:
                raise ConfigurationError(f"need L_f^k h callbacks up to k={r}")
            if self.lie_g1_fr is None or self.lie_g2_fr is None:
                raise ConfigurationError("need mixed Lie-derivative callbacks for r >= 2")

    def lie_f_value(self, k: int, x) -> float:
        """L_f^k h(x); k = 0 returns h itself."""
        if k == 0:
            return float(self.h(x))
        if self.lie_f is None or k > len(self.lie_f):
            raise ConfigurationError(f"L_f^{k} h callback not supplied")
        return float(self.lie_f[k - 1](x))


def lie_derivatives_rel1(sys: ControlAffineSystem, bar: BarrierSpec, x):
    """First-order Lie derivatives (L_f h, L_{g1} h, L_{g2} h) at x."""
    if bar.relative_degree != 1:
        raise ParameterError("lie_derivatives_rel1 requires relative degree 1")
    x = as_vector(x, sys.n, "x")
    grad = as_vector(bar.grad_h(x), sys.n, "grad_h(x)")
    fx, G1, G2 = sys.evaluate(x)
    return float(grad @ fx), grad @ G1, grad @ G2


def coeffs_from_poles(poles: Sequence[float]) -> np.ndarray:
    """Coefficients (a_1..a_r) of the monic polynomial with roots at -poles."""
    poles = np.asarray(poles, dtype=float).reshape(-1)
    if poles.size == 0:
        raise ParameterError("need at least one pole")
    if np.any(poles <= 0):
        raise ParameterError(f"all poles must be positive, got {poles}")
    return np.poly(-poles)[1:]


def s_sequence(sys: ControlAffineSystem, bar: BarrierSpec, x) -> np.ndarray:
    """Cascade values (s_0, ..., s_{r-1}) of the pole-shifted barrier chain.

    s_0 = h and s_k = (d/dt + lambda_k) s_{k-1}; along the drift the time
    derivatives expand into combinations of L_f^j h because the control and
    disturbance channels only appear at order r.
    """
    x = as_vector(x, sys.n, "x")
    r = bar.relative_degree
    lf = np.array([bar.lie_f_value(k, x) for k in range(r)])
    out = np.empty(r)
    out[0] = lf[0]
    for k in range(1, r):
        coeffs = np.poly(-np.asarray(bar.poles[:k], dtype=float))
        out[k] = sum(coeffs[i] * lf[k - i] for i in range(k + 1))
    return out


def eta(sys: ControlAffineSystem, bar: BarrierSpec, x) -> np.ndarray:
    """Stack [L_f^{r-1} h, ..., L_f h, h] used in the high-order constraint."""
    if bar.relative_degree < 2:
        raise ParameterError("eta requires relative degree >= 2")
    x = as_vector(x, sys.n, "x")
    r = bar.relative_degree
    return np.array([bar.lie_f_value(k, x) for k in range(r - 1, -1, -1)])


def check_gradient(bar: BarrierSpec, x, step: float = 1e-5) -> float:
    """Worst per-coordinate relative error of grad_h vs central differences."""
    if step <= 0:
        raise ParameterError("step must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    grad = np.asarray(bar.grad_h(x), dtype=float).reshape(-1)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fd = (float(bar.h(x + e)) - float(bar.h(x - e))) / (2.0 * step)
        err = abs(fd - grad[i]) / max(1.0, abs(grad[i]))
        worst = max(worst, err)
    return worst
