"""Two-qubit concurrence from states and from transport data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CaseAssumptionError, DensityOperator, SystemConfig, ValidationError
from .qst import ReconstructionInput, completeness_report

X_SHAPE_TOL = 1e-9
SINGULAR_REL = 1e-6

SIGMA_YY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


@dataclass(frozen=True)
class ConcurrenceResult:
    value: float
    branch: str
    method: str
    arguments: tuple[float, float] = (math.nan, math.nan)
    flags: tuple[str, ...] = ()


def _matrix(rho) -> np.ndarray:
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    if m.shape != (4, 4):
        raise ValidationError("concurrence needs a two-qubit state")
    return m


def _from_arguments(a_alpha: float, a_beta: float, method: str, flags=()) -> ConcurrenceResult:
    best = max(a_alpha, a_beta)
    if not best > 0:
        return ConcurrenceResult(0.0, "zero", method, (a_alpha, a_beta), tuple(flags))
    branch = "alpha" if a_alpha >= a_beta else "beta"
    return ConcurrenceResult(2.0 * best, branch, method, (a_alpha, a_beta), tuple(flags))


def concurrence_x_state(rho, tol: float = X_SHAPE_TOL) -> ConcurrenceResult:
    """``C = 2 max{0, |alpha| - sqrt(r00 r11), |beta| - sqrt(r01 r10)}`` for X-shaped states."""
    m = _matrix(rho)
    outer = max(abs(m[0, 1]), abs(m[0, 2]), abs(m[1, 3]), abs(m[2, 3]))
    if outer > tol:
        raise ValidationError(f"state is not X-shaped (|v,x,y,z| up to {outer:.3g}); use wootters_full")
    r = np.clip(np.diag(m).real, 0.0, None)
    return _from_arguments(abs(m[1, 2]) - math.sqrt(r[0] * r[3]),
                           abs(m[0, 3]) - math.sqrt(r[1] * r[2]), "x_state")


def wootters_full(rho) -> ConcurrenceResult:
    """Wootters concurrence from the spin-flipped spectrum ``rho (Y x Y) rho* (Y x Y)``."""
    m = _matrix(rho)
    R = m @ SIGMA_YY @ m.conj() @ SIGMA_YY
    ev = np.sort(np.sqrt(np.clip(np.linalg.eigvals(R).real, 0.0, None)))[::-1]
    c = ev[0] - ev[1] - ev[2] - ev[3]
    return ConcurrenceResult(max(0.0, float(c)), "spin_flip" if c > 0 else "zero", "wootters_full")


def _populations_product(inp: ReconstructionInput) -> tuple[float, float, float, float]:
    """``r00 r11``-type and ``r01 r10``-type products from currents and noise."""
    chiL, chiR = inp.chi()
    s = inp.S_LR / (inp.Gamma_L * inp.Gamma_R)
    r00_r11 = (s + chiL * chiR) * (s + (chiL + 1) * (chiR + 1))
    r01_r10 = (s + chiL * (chiR + 1)) * (s + (chiL + 1) * chiR)
    return r00_r11, r01_r10, chiL, chiR


def _sqrt_nonneg(x: float) -> float:
    # round-off can make a vanishing product slightly negative
    return math.sqrt(max(x, 0.0))


def concurrence_transport_special(inp: ReconstructionInput, tol: float = 1e-12) -> ConcurrenceResult:
    """Concurrence for degenerate qubits, resonant coupling only, started in the ground state.

    Needs ``I_L``, its first derivative, ``I_R`` and ``S_LR``.
    """
    if inp.g_res in (None, 0.0):
        raise CaseAssumptionError("needs a non-zero g_res")
    if abs(inp.delta or 0.0) > tol or abs(inp.g_off or 0.0) > tol:
        raise CaseAssumptionError("case requires delta = 0 and g_off = 0")
    if len(inp.I_L) < 2:
        raise ValidationError("first derivative of I_L required")
    phiL = inp.I_L[1] / inp.Gamma_L + inp.I_L[0]
    r00_r11, _, _, _ = _populations_product(inp)
    # value = 2 (|alpha| - sqrt(r00 r11)) with |alpha| = |phi_L| / (2 g_res)
    arg = abs(phiL / inp.g_res) / 2 - _sqrt_nonneg(r00_r11)
    return _from_arguments(arg, -math.inf, "transport_special")


def concurrence_transport_general(inp: ReconstructionInput, config: SystemConfig | None = None,
                                  x_shaped: bool | None = None) -> ConcurrenceResult:
    """Concurrence of an X-shaped evolution from currents up to second derivatives.

    Branch arguments: ``|alpha| - sqrt(r00 r11)`` with
    ``|alpha| = sqrt(dphi^2 + (rhs_a / delta)^2) / (4 |g_res|)`` and the
    matching ``beta`` expression. A branch whose coupling vanishes is
    treated as not generated (coherence assumed zero); a branch whose
    detuning is below ``1e-6 Gamma`` keeps only the imaginary part and is
    flagged partial.
    """
    if config is not None:
        x_shaped = completeness_report(config).element_statuses()
        if any(x_shaped[k] != "not_generated" for k in ("v", "x", "y", "z")):
            raise CaseAssumptionError("outer coherences are generated: evolution is not X-shaped")
    elif x_shaped is False:
        raise CaseAssumptionError("evolution is not X-shaped")
    for name in ("g_res", "g_off", "delta", "energy", "gamma_tilde"):
        if getattr(inp, name) is None:
            raise ValidationError(f"parameter {name} required")
    if len(inp.I_L) < 3 or len(inp.I_R) < 3:
        raise ValidationError("current derivatives up to order 2 required")
    phiL, phiR = inp.phi(0)
    dphiL, dphiR = inp.phi(1)
    r00_r11, r01_r10, chiL, chiR = _populations_product(inp)
    half = inp.gamma_tilde / 2
    scale = SINGULAR_REL * (inp.Gamma_L + inp.Gamma_R)
    flags = []

    def branch(name, g, detuning, p, dp, offset, pop_product):
        if g == 0:
            flags.append(f"{name}: not generated")
            return -_sqrt_nonneg(pop_product)
        re_term = dp + half * p + 4 * g ** 2 * offset
        if abs(detuning) < scale:
            flags.append(f"{name}: partial (imaginary part only)")
            mod = abs(p)
        else:
            mod = math.hypot(p, re_term / detuning)
        return mod / (4 * abs(g)) - _sqrt_nonneg(pop_product)

    a_alpha = branch("alpha", inp.g_res, inp.delta, phiL - phiR, dphiL - dphiR, chiL - chiR, r00_r11)
    a_beta = branch("beta", inp.g_off, inp.energy, phiL + phiR, dphiL + dphiR, chiL + chiR + 1, r01_r10)
    return _from_arguments(a_alpha, a_beta, "transport_general", flags)
