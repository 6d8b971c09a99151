"""State reconstruction from transport data.

The general projections ``p_{P,k} = Tr[n_P L^k rho]`` are available for
any number of qubits; the explicit inversion formulas below are the
two-qubit ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import combinations

import numpy as np

from . import krylov
from .lindblad import Superoperator, build_lindbladian
from .model import (
    DensityOperator,
    InconsistentDataError,
    SystemConfig,
    TransportQSTError,
    ValidationError,
    occupation_projector,
)
from .transport import TransportRecord, _state_vec, _trace_vec, current_superoperator

RECONSTRUCTED = "reconstructed"
UNIDENTIFIABLE = "unidentifiable"
NOT_GENERATED = "not_generated"

POP_TOL = 1e-6
IM_CONSISTENCY_TOL = 1e-9
RE_CONSISTENCY_TOL = 1e-8


# --------------------------------------------------------------------------
# general projections


def project_state(P, k: int, rho, L: Superoperator, config: SystemConfig) -> float:
    """``p_{P,k} = Tr[n_P L^k rho]``: the ``k``-th derivative of ``<n_P>``."""
    w = _state_vec(rho)
    for _ in range(k):
        w = L.matrix @ w
    n_P = occupation_projector(tuple(P), config.n_qubits)
    return float(np.real(np.vdot(n_P.reshape(-1), w)))


def projection_factored(P, k: int, rho, L: Superoperator, config: SystemConfig) -> float:
    """``Tr[prod_{j in P} (gamma_j^+ - I_j) / Gamma_j  L^k rho]`` applied as superoperators."""
    w = _state_vec(rho)
    for _ in range(k):
        w = L.matrix @ w
    for j in P:
        gp, gm = config.rates(j)
        w = (gp * w - current_superoperator(j, config).matrix @ w) / (gp + gm)
    return float(_trace_vec(w).real)


def projection_expanded(P, k: int, moments: dict, config: SystemConfig) -> float:
    """Inclusion-exclusion form over subsets ``P' of P``.

    ``moments[P'][k]`` holds ``I_{P'}^(k)``; the empty subset stands for
    ``Tr[L^k rho]`` and defaults to ``delta_{k0}``.
    """
    P = tuple(P)
    norm = math.prod(config.rates(j)[0] + config.rates(j)[1] for j in P)
    total = 0.0
    for r in range(len(P) + 1):
        for Pp in combinations(P, r):
            if Pp:
                I = moments[Pp][k]
            else:
                I = moments[()][k] if () in moments else float(k == 0)
            weight = math.prod(config.rates(i)[0] for i in P if i not in Pp)
            total += (-1) ** len(Pp) * weight * I
    return total / norm


# --------------------------------------------------------------------------
# two-qubit reconstruction


@dataclass(frozen=True)
class ReconstructionInput:
    """Transport data at one instant plus the parameters assumed known.

    ``I_L[k]`` and ``I_R[k]`` are the ``k``-th derivatives of the lead
    currents; only the orders a given reconstruction needs must be present.
    """

    rates_l: tuple[float, float]
    rates_r: tuple[float, float]
    I_L: tuple[float, ...]
    I_R: tuple[float, ...]
    S_LR: float
    g_res: float | None = None
    g_off: float | None = None
    delta: float | None = None
    energy: float | None = None
    gamma_tilde: float | None = None
    time: float | None = None

    @classmethod
    def from_record(cls, record: TransportRecord, i: int, config: SystemConfig, known=None,
                    **overrides) -> ReconstructionInput:
        """Input at row ``i``; ``known`` selects which config parameters are given.

        By default every parameter is taken from ``config``.
        """
        params = dict(g_res=config.g_res, g_off=config.g_off, delta=config.delta,
                      energy=config.energy_doubly, gamma_tilde=config.Gamma_tilde)
        if known is not None:
            params = {k: v for k, v in params.items() if k in known}
        params.update(overrides)
        return cls(config.rates(0), config.rates(1), tuple(map(float, record.I_L[i])),
                   tuple(map(float, record.I_R[i])), float(record.S_LR[i]),
                   time=float(record.times[i]), **params)

    @property
    def Gamma_L(self):
        return self.rates_l[0] + self.rates_l[1]

    @property
    def Gamma_R(self):
        return self.rates_r[0] + self.rates_r[1]

    def _need(self, order: int, *names):
        if len(self.I_L) <= order or len(self.I_R) <= order:
            raise ValidationError(f"current derivatives up to order {order} required")
        for name in names:
            if getattr(self, name) is None:
                raise ValidationError(f"parameter {name} required")

    def chi(self) -> tuple[float, float]:
        """``chi_j = (I_j - gamma_j^+) / Gamma_j`` (minus the occupation of qubit ``j``)."""
        return ((self.I_L[0] - self.rates_l[0]) / self.Gamma_L,
                (self.I_R[0] - self.rates_r[0]) / self.Gamma_R)

    def phi(self, order: int = 0) -> tuple[float, float]:
        """``d^order/dt^order`` of ``phi_j = I_j' / Gamma_j + I_j``."""
        self._need(order + 1)
        return (self.I_L[order + 1] / self.Gamma_L + self.I_L[order],
                self.I_R[order + 1] / self.Gamma_R + self.I_R[order])


@dataclass(frozen=True)
class Element:
    value: float
    status: str = RECONSTRUCTED
    residual: float = 0.0

    @property
    def known(self) -> bool:
        return self.status == RECONSTRUCTED


@dataclass(frozen=True)
class Populations:
    r00: float
    r01: float
    r10: float
    r11: float
    flags: tuple[str, ...] = ()

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.r00, self.r01, self.r10, self.r11)


def reconstruct_populations(inp: ReconstructionInput, tol: float = POP_TOL) -> Populations:
    """Populations from ``I_L``, ``I_R`` and ``S_LR``; ``r00`` by trace closure."""
    GL, GR = inp.Gamma_L, inp.Gamma_R
    chiL, chiR = inp.chi()
    s = inp.S_LR / (GL * GR)
    r11 = s + chiL * chiR
    r01 = -s - chiR * (inp.I_L[0] + inp.rates_l[1]) / GL
    r10 = -s - chiL * (inp.I_R[0] + inp.rates_r[1]) / GR
    r00 = 1.0 - r01 - r10 - r11
    pops = (r00, r01, r10, r11)
    flags = ()
    if any(r < -tol or r > 1 + tol for r in pops):
        flags = ("inconsistent transport data",)
    return Populations(*pops, flags=flags)


def _coupling_status(g, combination, tol):
    if g is None:
        raise ValidationError("coupling required")
    if g == 0:
        if abs(combination) > tol:
            raise InconsistentDataError(
                f"combination must vanish for zero coupling, residual {abs(combination):.3g}")
        return Element(math.nan, UNIDENTIFIABLE, abs(combination))
    return None


def reconstruct_im_coherences(inp: ReconstructionInput,
                              tol: float = IM_CONSISTENCY_TOL) -> tuple[Element, Element]:
    """``(Im alpha, Im beta)`` from the currents and their first derivatives."""
    inp._need(1, "g_res", "g_off")
    phiL, phiR = inp.phi(0)
    diff, tot = phiL - phiR, phiL + phiR
    im_a = _coupling_status(inp.g_res, diff, tol) or Element(-diff / (4 * inp.g_res))
    im_b = _coupling_status(inp.g_off, tot, tol) or Element(-tot / (4 * inp.g_off))
    return im_a, im_b


def re_coherence_rhs(inp: ReconstructionInput) -> tuple[float, float]:
    """Right-hand sides equal to ``-4 g_res delta Re(alpha)`` and ``-4 g_off E Re(beta)``."""
    inp._need(2, "g_res", "g_off", "gamma_tilde")
    phiL, phiR = inp.phi(0)
    dphiL, dphiR = inp.phi(1)
    chiL, chiR = inp.chi()
    half = inp.gamma_tilde / 2
    a = (dphiL - dphiR) + half * (phiL - phiR) + 4 * inp.g_res ** 2 * (chiL - chiR)
    b = (dphiL + dphiR) + half * (phiL + phiR) + 4 * inp.g_off ** 2 * (chiL + chiR + 1)
    return a, b


def reconstruct_re_coherences(inp: ReconstructionInput,
                              tol: float = RE_CONSISTENCY_TOL) -> tuple[Element, Element]:
    """``(Re alpha, Re beta)`` from second current derivatives."""
    inp._need(2, "g_res", "g_off", "delta", "energy", "gamma_tilde")
    rhs_a, rhs_b = re_coherence_rhs(inp)

    def solve(g, detuning, rhs):
        if g == 0:
            return Element(math.nan, NOT_GENERATED, abs(rhs))
        if detuning == 0:
            if abs(rhs) > tol:
                raise InconsistentDataError(
                    f"zero detuning requires a vanishing combination, residual {abs(rhs):.3g}")
            return Element(math.nan, UNIDENTIFIABLE, abs(rhs))
        return Element(-rhs / (4 * g * detuning))

    return solve(inp.g_res, inp.delta, rhs_a), solve(inp.g_off, inp.energy, rhs_b)


COHERENCE_KEYS = ("Im alpha", "Re alpha", "Im beta", "Re beta")
OUTER_KEYS = ("Im x", "Re x", "Im y", "Re y", "Im v", "Re v", "Im z", "Re z")


@dataclass(frozen=True)
class ReconstructedState:
    populations: Populations
    coherences: dict[str, Element]
    time: float | None = None
    flags: tuple[str, ...] = ()

    def matrix(self) -> np.ndarray:
        """Raw 4x4 estimate; unknown coherences are set to zero."""
        m = np.diag(np.array(self.populations.astuple(), dtype=complex))

        def value(name):
            re = self.coherences.get(f"Re {name}")
            im = self.coherences.get(f"Im {name}")
            re = re.value if re is not None and re.known else 0.0
            im = im.value if im is not None and im.known else 0.0
            return re + 1j * im

        for name, (i, j) in (("alpha", (1, 2)), ("beta", (0, 3)), ("v", (0, 1)),
                             ("x", (0, 2)), ("y", (1, 3)), ("z", (2, 3))):
            m[i, j] = value(name)
            m[j, i] = np.conj(m[i, j])
        return m

    @property
    def complete(self) -> bool:
        return all(e.known for e in self.coherences.values())

    def density(self) -> DensityOperator | None:
        """Validated density operator, or ``None`` when the raw estimate is non-physical."""
        try:
            return DensityOperator(self.matrix())
        except ValidationError:
            return None

    def to_dict(self) -> dict:
        def num(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "time": self.time,
            "populations": dict(zip(("r00", "r01", "r10", "r11"), self.populations.astuple())),
            "coherences": {k: {"value": num(e.value), "status": e.status, "residual": e.residual}
                           for k, e in self.coherences.items()},
            "flags": list(self.flags + self.populations.flags),
            "physical": self.density() is not None,
        }

    def to_text(self) -> str:
        rows = []
        for row in self.matrix():
            rows.append("  ".join(f"{z.real:+.12e}{z.imag:+.12e}j" for z in row))
        return "\n".join(rows)


LEVELS = ("populations", "imaginary", "full")


def reconstruct_state(inp: ReconstructionInput, level: str = "full",
                      config: SystemConfig | None = None, tol_im: float = IM_CONSISTENCY_TOL,
                      tol_re: float = RE_CONSISTENCY_TOL) -> ReconstructedState:
    """Reconstruct as much of the state as the data level allows.

    ``imaginary`` needs first derivatives, ``full`` second derivatives. With a
    ``config`` the elements outside the observable space are marked
    ``not_generated`` (otherwise ``v, x, y, z`` are assumed outside it).
    ``tol_im`` and ``tol_re`` gate the consistency checks of vanishing
    combinations; noisy data need them scaled to the noise level.
    """
    if level not in LEVELS:
        raise ValidationError(f"level must be one of {LEVELS}")
    pops = reconstruct_populations(inp)
    coh: dict[str, Element] = {}
    flags = []
    driven = config is not None and any(f != 0 for f in config.drive)
    if driven and level != "populations":
        # drives add sigma_x terms to the occupation equations of motion
        flags.append("drive present: coherence formulas do not apply")
        level = "populations"
    if level in ("imaginary", "full"):
        coh["Im alpha"], coh["Im beta"] = reconstruct_im_coherences(inp, tol_im)
    if level == "full":
        coh["Re alpha"], coh["Re beta"] = reconstruct_re_coherences(inp, tol_re)
    reach = completeness_report(config).reachable if config is not None else {}
    for key in COHERENCE_KEYS:
        if config is not None and not reach[key]:
            # dynamics never couple this part to the currents
            old = coh.get(key)
            coh[key] = Element(math.nan, NOT_GENERATED, old.residual if old is not None else 0.0)
        coh.setdefault(key, Element(math.nan, UNIDENTIFIABLE))
    for key in OUTER_KEYS:
        # reachable outer parts (drives) have no closed-form inversion here
        status = UNIDENTIFIABLE if config is not None and reach[key] else NOT_GENERATED
        coh[key] = Element(math.nan, status)
    return ReconstructedState(pops, coh, inp.time, tuple(flags))


# --------------------------------------------------------------------------
# steady state


class SteadyStateQSTError(TransportQSTError):
    pass


def solve_gamma_tilde(I_ss: float, g_res: float, delta: float, rates_l, rates_r) -> list[float]:
    """Positive roots of the steady-current relation, as a quadratic in ``Gamma~``.

    ``((G~/2)^2 + g^2 Gamma G~ / (Gamma_L Gamma_R) + delta^2) I = g^2 G~ D`` with
    ``D = gamma_L^+/Gamma_L - gamma_R^+/Gamma_R``.
    """
    GL, GR = sum(rates_l), sum(rates_r)
    D = rates_l[0] / GL - rates_r[0] / GR
    a = I_ss / 4
    b = g_res ** 2 * ((GL + GR) * I_ss / (GL * GR) - D)
    c = delta ** 2 * I_ss
    if a == 0:
        raise SteadyStateQSTError("parameters inconsistent with steady current: zero current")
    roots = np.roots([a, b, c])
    return sorted(float(r.real) for r in roots if abs(r.imag) <= 1e-12 * abs(r) and r.real > 0)


@dataclass(frozen=True)
class SteadyStateResult:
    state: ReconstructedState
    gamma_tilde: float | None = None
    gamma_tilde_candidates: tuple[float, ...] = ()

    @property
    def ambiguous(self) -> bool:
        """Two admissible roots: the steady current alone cannot pick ``Gamma~``."""
        return len(self.gamma_tilde_candidates) > 1


def steady_state_qst(inp: ReconstructionInput, tol: float = 1e-9) -> SteadyStateResult:
    """Steady-state reconstruction for ``g_off = 0``.

    Populations come from the currents and noise; ``Im alpha = -I/(2 g_res)``
    with ``I = I_L = -I_R``; ``Re alpha`` from the steady relation, which needs
    ``Gamma~``: when it is missing it is solved for (requires ``delta`` and
    ``g_res``). Only roots with ``Gamma~ >= Gamma`` are admissible; when
    both qualify the larger is returned, both are listed and the state is
    flagged ambiguous.
    """
    if inp.g_off not in (None, 0.0):
        raise ValidationError("steady-state shortcuts assume g_off = 0")
    I_L, I_R = inp.I_L[0], inp.I_R[0]
    if abs(I_L + I_R) > tol * max(1.0, abs(I_L)):
        raise InconsistentDataError(f"steady currents not conserved: I_L + I_R = {I_L + I_R:.3g}")
    I = 0.5 * (I_L - I_R)
    pops = reconstruct_populations(replace(inp, I_L=(I_L,), I_R=(I_R,)))
    GL, GR = inp.Gamma_L, inp.Gamma_R
    g = inp.g_res
    coh = {k: Element(math.nan, NOT_GENERATED) for k in ("Im beta", "Re beta") + OUTER_KEYS}
    gamma_tilde, candidates = inp.gamma_tilde, ()
    if g is None or g == 0:
        coh["Im alpha"] = Element(math.nan, UNIDENTIFIABLE, abs(I))
        coh["Re alpha"] = Element(math.nan, UNIDENTIFIABLE)
        return SteadyStateResult(ReconstructedState(pops, coh, inp.time), gamma_tilde)
    coh["Im alpha"] = Element(-I / (2 * g))
    if gamma_tilde is None and inp.delta is not None:
        candidates = tuple(solve_gamma_tilde(I, g, inp.delta, inp.rates_l, inp.rates_r))
        admissible = [c for c in candidates if c >= (GL + GR) * (1 - 1e-9)]
        if not admissible:
            raise SteadyStateQSTError("parameters inconsistent with steady current: no admissible root")
        gamma_tilde = admissible[-1]
        candidates = tuple(admissible)
    D = inp.rates_l[0] / GL - inp.rates_r[0] / GR
    if inp.delta is None or gamma_tilde is None:
        coh["Re alpha"] = Element(math.nan, UNIDENTIFIABLE)
    else:
        rhs = 2 * g ** 2 * D - (gamma_tilde / 2 + 4 * g ** 2 / (GL * GR) * (GL + GR) / 2) * I
        if inp.delta == 0:
            coh["Re alpha"] = Element(math.nan, UNIDENTIFIABLE, abs(rhs))
        else:
            coh["Re alpha"] = Element(rhs / (2 * g * inp.delta))
    flags = ("gamma_tilde ambiguous: two admissible roots",) if len(candidates) > 1 else ()
    return SteadyStateResult(ReconstructedState(pops, coh, inp.time, flags), gamma_tilde, candidates)


# --------------------------------------------------------------------------
# completeness


@dataclass(frozen=True, eq=False)
class CompletenessReport:
    reachable: dict[str, bool]
    observable_dimension: int
    seed_dimensions: dict[str, int]
    budgets: dict[str, int]

    @property
    def statuses(self) -> dict[str, str]:
        return {k: "reconstructible" if v else "unreachable" for k, v in self.reachable.items()}

    def element_statuses(self) -> dict[str, str]:
        """Per complex element: reconstructed, partial or not_generated."""
        out = {}
        for name in ("alpha", "beta", "v", "x", "y", "z"):
            parts = (self.reachable[f"Im {name}"], self.reachable[f"Re {name}"])
            out[name] = RECONSTRUCTED if all(parts) else ("partial" if any(parts) else NOT_GENERATED)
        return out

    @property
    def complete(self) -> bool:
        return all(self.reachable.values())

    def to_dict(self) -> dict:
        return {"observable_dimension": self.observable_dimension,
                "seed_dimensions": self.seed_dimensions, "budgets": self.budgets,
                "directions": self.statuses, "elements": self.element_statuses()}


@lru_cache(maxsize=256)
def completeness_report(config: SystemConfig, L: Superoperator | None = None) -> CompletenessReport:
    """Classify every real coordinate of ``rho`` as reconstructible or not.

    Uses the sum of the Krylov spaces of all occupation seeds plus the
    identity (unit trace is always known).
    """
    L = build_lindbladian(config) if L is None else L
    space = krylov.assemble_observable_space(krylov.krylov_bases(L, config))
    reach = krylov.direction_membership(space, config.n_qubits)
    return CompletenessReport(reach, space.dimension, dict(space.seed_dimensions), dict(space.budgets))


def reconstruct_record(record: TransportRecord, config: SystemConfig, level: str = "full",
                       known=None, **tols) -> list[ReconstructedState]:
    return [reconstruct_state(ReconstructionInput.from_record(record, i, config, known), level, config,
                              **tols)
            for i in range(len(record))]

