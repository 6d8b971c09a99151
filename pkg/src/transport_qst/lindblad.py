"""Lindbladian assembly, time propagation and steady states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .model import (
    DensityOperator,
    SystemConfig,
    TransportQSTError,
    ValidationError,
    devectorize,
    dissipator,
    number_op,
    sigma_minus,
    sigma_plus,
    sigma_z,
    spre,
    spost,
    vectorize,
)

TAGS = (
    "lindbladian", "lindbladian_adjoint", "current", "activity",
    "dissipator", "jump_plus", "jump_minus", "generic",
)

EIGVEC_COND_MAX = 1e8


class PropagationError(TransportQSTError):
    pass


class SteadyStateError(TransportQSTError):
    pass


@dataclass(frozen=True, eq=False)
class Superoperator:
    """A ``4^N x 4^N`` matrix acting on row-wise vectorized operators."""

    matrix: np.ndarray = field(repr=False)
    tag: str = "generic"
    qubit: int | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("superoperator must be square")
        if self.tag not in TAGS:
            raise ValidationError(f"unknown tag {self.tag!r}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, op):
        """Apply to an operator given as a matrix or a vector; returns the same kind."""
        op = np.asarray(op)
        if op.ndim == 2:
            return devectorize(self.matrix @ vectorize(op))
        return self.matrix @ op

    def __matmul__(self, other):
        if isinstance(other, Superoperator):
            return Superoperator(self.matrix @ other.matrix)
        return self.matrix @ other


def hamiltonian(config: SystemConfig) -> np.ndarray:
    """System Hamiltonian including optional local drives."""
    n = config.n_qubits
    H = sum(e * number_op(j, n) for j, e in enumerate(config.eps))
    for j in range(n - 1):
        sp_a, sm_a = sigma_plus(j, n), sigma_minus(j, n)
        sp_b, sm_b = sigma_plus(j + 1, n), sigma_minus(j + 1, n)
        H = H + config.u_int * number_op(j, n) @ number_op(j + 1, n)
        hop = config.g_res * sp_a @ sm_b + config.g_off * sp_a @ sp_b
        H = H + hop + hop.conj().T
    for j, f in enumerate(config.drive):
        if f:
            H = H + f * (sigma_plus(j, n) + sigma_minus(j, n))
    return np.asarray(H, dtype=complex)


def build_lindbladian(config: SystemConfig) -> Superoperator:
    n = config.n_qubits
    H = hamiltonian(config)
    L = -1j * (spre(H) - spost(H))
    for j in range(n):
        gp, gm = config.rates(j)
        if gp:
            L = L + gp * dissipator(sigma_plus(j, n))
        if gm:
            L = L + gm * dissipator(sigma_minus(j, n))
        gz = config.gamma_z[j]
        if gz:
            L = L + 0.5 * gz * dissipator(sigma_z(j, n))
    return Superoperator(L, "lindbladian")


def adjoint(L: Superoperator) -> Superoperator:
    """Heisenberg-picture generator: conjugate transpose w.r.t. the HS product."""
    tag = {"lindbladian": "lindbladian_adjoint", "lindbladian_adjoint": "lindbladian"}.get(L.tag, L.tag)
    return Superoperator(L.matrix.conj().T, tag, L.qubit)


def bath_dissipator(j: int, config: SystemConfig) -> Superoperator:
    n = config.n_qubits
    gp, gm = config.rates(j)
    m = gp * dissipator(sigma_plus(j, n)) + gm * dissipator(sigma_minus(j, n))
    return Superoperator(m, "dissipator", j)


# --------------------------------------------------------------------------
# propagation


class Propagator:
    """``exp(L t)`` for a fixed Lindbladian.

    ``eigendecomposition`` is used when the eigenvector matrix is well
    conditioned; otherwise ``scaling_squaring`` (``scipy.linalg.expm``).
    ``adaptive_rk`` integrates the ODE and is meant for cross-checks.
    """

    def __init__(self, L: Superoperator, method: str | None = None, rtol=1e-12, atol=1e-14):
        self.L = L
        self.rtol, self.atol = rtol, atol
        M = L.matrix
        self._eig = None
        self.eigvec_condition = np.inf
        if method in (None, "eigendecomposition"):
            lam, V = np.linalg.eig(M)
            cond = np.linalg.cond(V)
            self.eigvec_condition = cond
            if cond < EIGVEC_COND_MAX:
                self._eig = (lam, V, np.linalg.inv(V))
                method = "eigendecomposition"
            elif method == "eigendecomposition":
                raise PropagationError(
                    f"eigenvector condition number {cond:.3g} exceeds {EIGVEC_COND_MAX:g}")
            else:
                method = "scaling_squaring"
        if method not in ("eigendecomposition", "scaling_squaring", "adaptive_rk"):
            raise ValidationError(f"unknown propagation method {method!r}")
        self.method = method

    def evolve_vec(self, v0, t: float) -> np.ndarray:
        if t < 0:
            raise ValidationError("t must be non-negative")
        v0 = np.asarray(v0, dtype=complex)
        if t == 0:
            return v0.copy()
        if self.method == "eigendecomposition":
            lam, V, Vinv = self._eig
            return V @ (np.exp(lam * t) * (Vinv @ v0))
        if self.method == "scaling_squaring":
            return scipy.linalg.expm(self.L.matrix * t) @ v0
        M = self.L.matrix
        sol = solve_ivp(lambda _, y: M @ y, (0.0, t), v0, method="DOP853",
                        rtol=self.rtol, atol=self.atol)
        if not sol.success:
            raise PropagationError(f"integrator failed: {sol.message}")
        out = sol.y[:, -1]
        d = int(round(np.sqrt(out.size)))
        resid = abs(np.trace(devectorize(out)) - np.trace(devectorize(v0)))
        if resid > 1e-9 * max(1.0, abs(np.trace(devectorize(v0)))):
            raise PropagationError(f"trace drift {resid:.3g} exceeds tolerance (dim {d})")
        return out

    def evolve(self, rho0, t: float) -> DensityOperator:
        rho0 = rho0 if isinstance(rho0, DensityOperator) else DensityOperator(rho0)
        if t == 0:
            return rho0
        out = self.evolve_vec(rho0.vec(), t)
        m = devectorize(out)
        m = 0.5 * (m + m.conj().T)
        return DensityOperator(m / np.trace(m).real)

    def trajectory(self, rho0, times) -> list[DensityOperator]:
        return [self.evolve(rho0, float(t)) for t in times]

    def operator(self, t: float) -> np.ndarray:
        """The propagator matrix ``exp(L t)``."""
        if self.method == "eigendecomposition":
            lam, V, Vinv = self._eig
            return (V * np.exp(lam * t)) @ Vinv
        return scipy.linalg.expm(self.L.matrix * t)


def evolve(L: Superoperator, rho0, t: float, method: str | None = None) -> DensityOperator:
    return Propagator(L, method).evolve(rho0, t)


def steady_state(L: Superoperator, tol: float = 1e-10) -> DensityOperator:
    """Unique null vector of ``L``, trace-normalized and symmetrized."""
    lam = np.linalg.eigvals(L.matrix)
    near_zero = int(np.sum(np.abs(lam) <= tol))
    if near_zero != 1:
        raise SteadyStateError(
            f"steady state not unique: {near_zero} eigenvalues with |lambda| <= {tol:g}")
    _, _, Vh = np.linalg.svd(L.matrix)
    m = devectorize(Vh[-1].conj())
    tr = np.trace(m)
    if abs(tr) < 1e-14:
        raise SteadyStateError("null vector is traceless")
    m = m / tr
    m = 0.5 * (m + m.conj().T)
    return DensityOperator(m / np.trace(m).real)
