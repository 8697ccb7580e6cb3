"""Euler-Lagrange plants, their disturbance observer, and the energy filter.

Mechanical systems M(q) qddot + C(q, qdot) qdot + G(q) = tau + tau_d admit a
dedicated observer (estimate = z + alpha1*qdot) and an energy-based safety
constraint that only needs a C^1 position barrier h_q.  The constraint row is
psi1 = -qdot, shared by every barrier, which is what makes the
multi-constraint reduction a plain minimum and creates the qdot = 0
singularity handled by `singularity_guard`.

The 2-DOF planar arm used by the benchmark scenarios lives here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .filters import MODE_FULL, MODE_NO_OMEGA, Decision
from .model import ControlAffineSystem, ParameterError, as_vector
from .observer import ObserverConfig


@dataclass(frozen=True)
class ELSystem:
    """Inertia/Coriolis/gravity callbacks of a mechanical plant.

    mass maps q -> (n, n) SPD; coriolis maps (q, qdot) -> (n, n) such that
    Mdot - 2C is skew-symmetric; gravity maps q -> (n,).
    """

    dof: int
    mass: Callable[[np.ndarray], np.ndarray]
    coriolis: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gravity: Callable[[np.ndarray], np.ndarray]

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = as_vector(x, 2 * self.dof, "x")
        return x[:self.dof], x[self.dof:]


@dataclass(frozen=True)
class TwoLinkArm:
    """Planar 2-DOF arm with unit default masses and link length."""

    m1: float = 1.0
    m2: float = 1.0
    l: float = 1.0
    g_accel: float = 9.81

    def system(self) -> ELSystem:
        m1, m2, l, g = self.m1, self.m2, self.l, self.g_accel

        def mass(q):
            c2 = math.cos(q[1])
            a11 = m1 * l * l / 3.0 + 4.0 * m2 * l * l / 3.0 + m2 * l * l * c2
            a12 = m2 * l * l / 3.0 + m2 * l * l / 2.0 * c2
            a22 = m2 * l * l / 3.0
            return np.array([[a11, a12], [a12, a22]])

        def coriolis(q, qd):
            s2 = math.sin(q[1])
            k = m2 * l * l / 2.0
            return np.array([[-k * s2 * qd[1], -k * (qd[0] + qd[1]) * s2],
                             [k * qd[0] * s2, 0.0]])

        def gravity(q):
            c1 = math.cos(q[0])
            c12 = math.cos(q[0] + q[1])
            return np.array([m1 * g * l / 2.0 * c1 + m2 * g * l / 2.0 * c12
                             + m2 * g * l * c1,
                             m2 * g * l / 2.0 * c12])

        return ELSystem(dof=2, mass=mass, coriolis=coriolis, gravity=gravity)


def el_accel(sys: ELSystem, q, qd, tau, tau_d) -> np.ndarray:
    """Joint accelerations from the equations of motion."""
    q = as_vector(q, sys.dof, "q")
    qd = as_vector(qd, sys.dof, "qd")
    tau = as_vector(tau, sys.dof, "tau")
    tau_d = as_vector(tau_d, sys.dof, "tau_d")
    M = sys.mass(q)
    rhs = tau + tau_d - sys.coriolis(q, qd) @ qd - sys.gravity(q)
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise ParameterError(f"inertia matrix solve failed at q = {q}") from exc


def el_estimate(alpha1: float, z, qd) -> np.ndarray:
    """Disturbance-torque estimate z + alpha1 * qdot."""
    return np.asarray(z, dtype=float) + alpha1 * np.asarray(qd, dtype=float)


def el_dob_rhs(sys: ELSystem, alpha1: float, z, q, qd, tau) -> np.ndarray:
    """Observer-state derivative for the mechanical observer."""
    q = as_vector(q, sys.dof, "q")
    qd = as_vector(qd, sys.dof, "qd")
    z = as_vector(z, sys.dof, "z")
    tau = as_vector(tau, sys.dof, "tau")
    M = sys.mass(q)
    inner = z + alpha1 * qd - sys.coriolis(q, qd) @ qd - sys.gravity(q) + tau
    return -alpha1 * np.linalg.solve(M, inner)


def mu_bounds(sys: ELSystem, q_grid) -> tuple[float, float]:
    """(min, max) eigenvalue of the inverse inertia matrix over a grid of q."""
    lo, hi = np.inf, -np.inf
    count = 0
    for q in q_grid:
        q = as_vector(q, sys.dof, "q")
        eigs = np.linalg.eigvalsh(sys.mass(q))
        if eigs[0] <= 0:
            raise ParameterError(f"inertia matrix not SPD at q = {q}")
        lo = min(lo, 1.0 / eigs[-1])
        hi = max(hi, 1.0 / eigs[0])
        count += 1
    if count == 0:
        raise ParameterError("need a nonempty grid")
    return float(lo), float(hi)


def kinetic_energy(sys: ELSystem, q, qd) -> float:
    qd = np.asarray(qd, dtype=float)
    return 0.5 * float(qd @ sys.mass(np.asarray(q, dtype=float)) @ qd)


@dataclass(frozen=True)
class ELFilterParams:
    """Tuning of the energy-based filter; alpha1 is the observer gain.

    The effective coercivity constant is alpha1 * mu1, where mu1 lower-bounds
    the eigenvalues of the inverse inertia matrix over the operating range.
    omega enters the constraint as omega^2/(2 nu); eps_singular is the
    joint-speed threshold below which the constraint row vanishes and the QP
    is bypassed.
    """

    alpha1: float
    beta: float
    gamma: float
    nu: float
    mu1: float
    omega: float = 0.0
    eps_singular: float = 1e-4
    mode: str = MODE_FULL

    def __post_init__(self):
        if min(self.alpha1, self.beta, self.gamma, self.nu, self.mu1) <= 0:
            raise ParameterError("alpha1, beta, gamma, nu, mu1 must be positive")
        if self.omega < 0 or self.eps_singular <= 0:
            raise ParameterError("need omega >= 0 and eps_singular > 0")
        if self.mode not in (MODE_FULL, MODE_NO_OMEGA):
            raise ParameterError(f"unknown mode {self.mode!r}")

    @property
    def alpha(self) -> float:
        return self.alpha1 * self.mu1


def el_psi(sys: ELSystem, h_q: Callable, grad_hq: Callable,
           fp: ELFilterParams, q, qd, tau_hat) -> tuple[float, np.ndarray]:
    """Energy-filter constraint coefficients; psi1 is always -qdot."""
    denom = 4.0 * fp.alpha - 2.0 * fp.gamma - 2.0 * fp.nu
    if denom <= 0:
        raise ParameterError(
            f"need 4*alpha1*mu1 - 2*gamma - 2*nu > 0, got {denom}")
    q = as_vector(q, sys.dof, "q")
    qd = as_vector(qd, sys.dof, "qd")
    tau_hat = as_vector(tau_hat, sys.dof, "tau_hat")
    J = as_vector(grad_hq(q), sys.dof, "grad_hq(q)")
    omega_term = 0.0 if fp.mode == MODE_NO_OMEGA else fp.omega ** 2 / (2.0 * fp.nu)
    psi0 = (fp.beta * float(qd @ J)
            - float(qd @ (tau_hat - sys.gravity(q)))
            - omega_term
            - float(qd @ qd) / denom
            + fp.gamma * (fp.beta * float(h_q(q)) - kinetic_energy(sys, q, qd)))
    return psi0, -qd


def el_robust_psi(sys: ELSystem, h_q: Callable, grad_hq: Callable,
                  beta: float, gamma: float, d_max: float,
                  q, qd) -> tuple[float, np.ndarray]:
    """Worst-case counterpart of the energy filter over ||tau_d|| <= d_max."""
    if d_max < 0:
        raise ParameterError("d_max must be nonnegative")
    q = as_vector(q, sys.dof, "q")
    qd = as_vector(qd, sys.dof, "qd")
    J = as_vector(grad_hq(q), sys.dof, "grad_hq(q)")
    psi0 = (beta * float(qd @ J)
            + float(qd @ sys.gravity(q))
            - float(np.linalg.norm(qd)) * d_max
            + gamma * (beta * float(h_q(q)) - kinetic_energy(sys, q, qd)))
    return psi0, -qd


def multi_constraint_reduce(psi0_list: Sequence[float],
                            psi1: np.ndarray) -> tuple[float, np.ndarray]:
    """Collapse constraints sharing the row psi1 into their binding minimum."""
    if len(psi0_list) == 0:
        raise ParameterError("need at least one constraint")
    return float(min(psi0_list)), np.asarray(psi1, dtype=float)


def pd_nominal(Kp, Kd, q, qd, q_des, qd_des, gravity=None) -> np.ndarray:
    """PD tracking law, optionally with gravity compensation."""
    Kp = np.asarray(Kp, dtype=float)
    Kd = np.asarray(Kd, dtype=float)
    if np.any(np.diag(Kp) <= 0) or np.any(np.diag(Kd) <= 0):
        raise ParameterError("PD gains must be positive")
    tau = Kp @ (np.asarray(q_des, dtype=float) - np.asarray(q, dtype=float)) \
        + Kd @ (np.asarray(qd_des, dtype=float) - np.asarray(qd, dtype=float))
    if gravity is not None:
        tau = tau + gravity
    return tau


def singularity_guard(fp: ELFilterParams, qd, psi0: float, psi1: np.ndarray):
    """Bypass the QP near qdot = 0, where the constraint row vanishes.

    Returns (psi0, psi1, bypass, event).  Below the speed threshold the
    nominal control passes through; when the constraint is additionally
    unsatisfiable there (psi0 < 0) the step is flagged as a transient
    infeasibility event.
    """
    if float(np.linalg.norm(qd)) >= fp.eps_singular:
        return psi0, psi1, False, None
    event = "singular_infeasible" if psi0 < 0 else None
    return psi0, psi1, True, event


@dataclass
class ELParamReport:
    alpha_ok: bool
    beta_ok: bool
    alpha_margin: float
    beta_margin: float
    messages: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.alpha_ok and self.beta_ok


def validate_el_params(sys: ELSystem, fp: ELFilterParams, q0, qd0,
                       h_q0: float, e0_norm: float) -> ELParamReport:
    """Strict parameter inequalities of the energy-filter guarantee."""
    alpha_margin = fp.alpha - 0.5 * (fp.gamma + fp.nu)
    messages = []
    if h_q0 <= 0:
        beta_ok, beta_margin = False, -np.inf
        messages.append("initial barrier value must be positive")
    else:
        need = (2.0 * kinetic_energy(sys, q0, qd0) + e0_norm ** 2) / (2.0 * h_q0)
        beta_margin = fp.beta - need
        beta_ok = beta_margin > 0
        if not beta_ok:
            messages.append(f"beta margin {beta_margin:.3e} not positive")
    if alpha_margin <= 0:
        messages.append(f"alpha margin {alpha_margin:.3e} not positive")
    return ELParamReport(alpha_ok=alpha_margin > 0, beta_ok=beta_ok,
                         alpha_margin=float(alpha_margin),
                         beta_margin=float(beta_margin), messages=messages)


def to_control_affine(sys: ELSystem) -> ControlAffineSystem:
    """Embed the mechanical plant as x = [q; qdot] with u = tau, d = tau_d."""
    n = sys.dof

    def terms(x):
        q, qd = x[:n], x[n:]
        Minv = np.linalg.inv(sys.mass(q))
        drift_acc = -Minv @ (sys.coriolis(q, qd) @ qd + sys.gravity(q))
        f = np.concatenate([qd, drift_acc])
        B = np.vstack([np.zeros((n, n)), Minv])
        return f, B, B

    return ControlAffineSystem(
        n=2 * n, m=n, p=n,
        f=lambda x: terms(x)[0],
        g1=lambda x: terms(x)[1],
        g2=lambda x: terms(x)[2],
        terms=terms)


def el_observer_config(sys: ELSystem, alpha1: float, mu1: float,
                       nu: float, omega: float) -> ObserverConfig:
    """Mechanical observer as a gain pair on the embedded plant.

    L_d = [0 | alpha1*I] with antiderivative p(x) = alpha1*qdot reproduces
    the estimate z + alpha1*qdot exactly; the effective coercivity constant
    is alpha1*mu1.
    """
    n = sys.dof
    Ld = np.hstack([np.zeros((n, n)), alpha1 * np.eye(n)])
    return ObserverConfig(
        dim_state=2 * n, dim_dist=n,
        gain=lambda x: Ld,
        gain_integral=lambda x: alpha1 * x[n:],
        alpha=alpha1 * mu1, nu=nu, omega=omega)


class ELQpFilter:
    """Energy-based observer-aware filter with the singularity guard."""

    def __init__(self, sys: ELSystem, h_q: Callable, grad_hq: Callable,
                 params: ELFilterParams):
        self.sys = sys
        self.h_q = h_q
        self.grad_hq = grad_hq
        self.params = params

    def constraint(self, t, x, u_nom, d_hat) -> Decision:
        q, qd = self.sys.split(x)
        psi0, psi1 = el_psi(self.sys, self.h_q, self.grad_hq, self.params,
                            q, qd, d_hat)
        psi0, psi1, bypass, event = singularity_guard(self.params, qd, psi0, psi1)
        return Decision(psi0=psi0, psi1=psi1, bypass=bypass, event=event)

    def probe(self, x, e_d) -> dict:
        q, qd = self.sys.split(x)
        return {"h": float(self.h_q(q)),
                "hbar": (self.params.beta * float(self.h_q(q))
                         - kinetic_energy(self.sys, q, qd)
                         - 0.5 * float(np.dot(e_d, e_d)))}


class ELRobustFilter:
    """Worst-case energy filter used as the comparison baseline."""

    def __init__(self, sys: ELSystem, h_q: Callable, grad_hq: Callable,
                 beta: float, gamma: float, d_max: float,
                 eps_singular: float = 1e-4):
        self.sys = sys
        self.h_q = h_q
        self.grad_hq = grad_hq
        self.beta = beta
        self.gamma = gamma
        self.d_max = d_max
        self.eps_singular = eps_singular

    def constraint(self, t, x, u_nom, d_hat) -> Decision:
        q, qd = self.sys.split(x)
        psi0, psi1 = el_robust_psi(self.sys, self.h_q, self.grad_hq,
                                   self.beta, self.gamma, self.d_max, q, qd)
        if float(np.linalg.norm(qd)) < self.eps_singular:
            return Decision(psi0=psi0, psi1=psi1, bypass=True,
                            event="singular_infeasible" if psi0 < 0 else None)
        return Decision(psi0=psi0, psi1=psi1)

    def probe(self, x, e_d) -> dict:
        q, qd = self.sys.split(x)
        return {"h": float(self.h_q(q)),
                "hbar": (self.beta * float(self.h_q(q))
                         - kinetic_energy(self.sys, q, qd))}


class ELNoFilter:
    """Unfiltered baseline that still logs the position barrier."""

    def __init__(self, sys: ELSystem, h_q: Callable):
        self.sys = sys
        self.h_q = h_q

    def constraint(self, t, x, u_nom, d_hat) -> Decision:
        return Decision(psi0=None, psi1=None, bypass=True)

    def probe(self, x, e_d) -> dict:
        q, _ = self.sys.split(x)
        return {"h": float(self.h_q(q)), "hbar": np.nan}
