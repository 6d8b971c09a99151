"""Recovery of coupling, detuning and dephasing parameters from current traces.

All estimators work on *probes*: the lead currents and their first few time
derivatives at a handful of instants. With ``Gamma_j = gamma_j^+ + gamma_j^-``
the helper quantities are ``phi_j = I_j' / Gamma_j + I_j`` and
``chi_j = (I_j - gamma_j^+) / Gamma_j``, and with ``dphi = phi_L - phi_R``,
``Phi = phi_L + phi_R``, ``dchi = chi_L - chi_R``, ``X = chi_L + chi_R`` the
two equation families read

    0 = dphi'' + Gt dphi' + (Gt^2/4 + delta^2) dphi + 4 g^2 dchi' + 2 g^2 Gt dchi
    0 = Phi''  + Gt Phi'  + (Gt^2/4 + E^2) Phi    + 4 h^2 X'    + 2 h^2 Gt (X + 1)

(``g = g_res``, ``h = g_off``, ``Gt`` the total coherence decay rate).
Only ``delta^2`` and ``E^2`` enter, so detunings are reported nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .krylov import orth_extend
from .lindblad import Superoperator, adjoint
from .model import (
    CaseAssumptionError,
    ConditioningError,
    InconsistentDataError,
    SystemConfig,
    ValidationError,
    vectorize,
)
from .transport import TransportRecord

RANK_TOL = 1e-10
CLOSURE_TOL = 1e-10
CLOSURE_COND_MAX = 1e10
NEGATIVE_TOL = 1e-8
VANISH_TOL = 1e-9
GN_MAX_ITER = 50
GN_GRAD_TOL = 1e-12

REQUIRED_PROBES = {"general": 5, "general_known_gamma": 4, "degenerate": 3, "resonant": 3,
                   "resonant_two": 2}


# --------------------------------------------------------------------------
# probe data


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    """Probe instants with current derivatives ``I_j^(0..k)`` and known rates."""

    times: np.ndarray
    I_L: np.ndarray
    I_R: np.ndarray
    rates_l: tuple[float, float]
    rates_r: tuple[float, float]

    def __post_init__(self):
        IL = np.atleast_2d(np.asarray(self.I_L, dtype=float))
        IR = np.atleast_2d(np.asarray(self.I_R, dtype=float))
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if IL.shape != IR.shape or IL.shape[0] != len(t):
            raise ValidationError("I_L, I_R need shape (n_probes, n_orders) matching times")
        for r in (self.rates_l, self.rates_r):
            if sum(r) <= 0:
                raise ValidationError("both leads need a positive total rate")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "I_L", IL)
        object.__setattr__(self, "I_R", IR)

    @classmethod
    def from_record(cls, record: TransportRecord, indices, config: SystemConfig) -> EstimationProblem:
        idx = list(indices)
        return cls(record.times[idx], record.I_L[idx], record.I_R[idx],
                   config.rates(0), config.rates(1))

    @property
    def n_probes(self) -> int:
        return len(self.times)

    @property
    def max_order(self) -> int:
        return self.I_L.shape[1] - 1

    def require(self, case: str, order: int):
        if self.n_probes < REQUIRED_PROBES[case]:
            raise ValidationError(f"case {case!r} needs at least {REQUIRED_PROBES[case]} probe times, "
                                  f"got {self.n_probes}")
        if self.max_order < order:
            raise ValidationError(f"case {case!r} needs current derivatives up to order {order}")

    def phi(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        GL, GR = sum(self.rates_l), sum(self.rates_r)
        return (self.I_L[:, order + 1] / GL + self.I_L[:, order],
                self.I_R[:, order + 1] / GR + self.I_R[:, order])

    def chi(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        GL, GR = sum(self.rates_l), sum(self.rates_r)
        cl = self.I_L[:, order] / GL
        cr = self.I_R[:, order] / GR
        if order == 0:
            cl = cl - self.rates_l[0] / GL
            cr = cr - self.rates_r[0] / GR
        return cl, cr

    def families(self, orders: int = 2) -> dict[str, np.ndarray]:
        """Combinations ``dphi^(k)``, ``Phi^(k)`` for ``k < orders+1`` and ``dchi, X`` up to ``orders-1``."""
        out = {}
        for k in range(orders + 1):
            pl, pr = self.phi(k)
            out[f"dphi{k}"], out[f"Phi{k}"] = pl - pr, pl + pr
        for k in range(orders):
            cl, cr = self.chi(k)
            out[f"dchi{k}"], out[f"X{k}"] = cl - cr, cl + cr
        return out


@dataclass(frozen=True)
class EstimationResult:
    """Estimated parameters with diagnostics.

    ``residual`` is the largest equation residual relative to the size of
    the terms it balances; ``condition`` is the condition number of the
    column-scaled linear design.
    """

    values: dict
    residual: float
    condition: float
    case: str
    equation_residuals: tuple[float, ...] = ()
    unidentifiable: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {"case": self.case, "values": {k: float(v) for k, v in self.values.items()},
                "residual": float(self.residual), "condition": float(self.condition),
                "equation_residuals": [float(r) for r in self.equation_residuals],
                "unidentifiable": list(self.unidentifiable), "flags": list(self.flags)}


def suggest_probe_times(config: SystemConfig | None = None, n: int = 5, Gamma: float | None = None,
                        span=(0.1, 5.0)) -> np.ndarray:
    """Log-spaced probe times over ``span / Gamma``."""
    if Gamma is None:
        if config is None:
            raise ValidationError("need a config or Gamma")
        Gamma = config.Gamma
    if not Gamma > 0:
        raise ValidationError("Gamma must be positive")
    return np.geomspace(span[0], span[1], n) / Gamma


# --------------------------------------------------------------------------
# linear algebra helpers


def _scaled_lstsq(A: np.ndarray, b: np.ndarray, what: str, tol: float = RANK_TOL):
    """Least squares with column equilibration; raises on numerical rank deficiency."""
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise ConditioningError(f"{what}: unknown with identically zero column")
    As = A / norms
    s = np.linalg.svd(As, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else math.inf
    if A.shape[0] < A.shape[1] or s[-1] <= tol * s[0]:
        raise ConditioningError(f"{what}: design matrix is rank deficient (condition {cond:.3g}); "
                                "add probe times or spread them further apart")
    x, *_ = np.linalg.lstsq(As, b, rcond=None)
    return x / norms, cond


def _relative_residuals(terms: list[np.ndarray]) -> np.ndarray:
    """Per-row ``|sum terms| / max(|term|)``, guarding all-zero rows."""
    T = np.column_stack(terms)
    scale = np.max(np.abs(T), axis=1)
    total = np.abs(T.sum(axis=1))
    return np.where(scale > 0, total / np.where(scale > 0, scale, 1.0), 0.0)


def _sqrt_checked(value: float, scale: float, name: str, exc=InconsistentDataError) -> float:
    if value < -NEGATIVE_TOL * max(scale, 1e-300):
        raise exc(f"inconsistent probe data: {name} = {value:.6g} < 0")
    return math.sqrt(max(value, 0.0))


def _gauss_newton(residual, jacobian, x0: np.ndarray, max_iter: int = GN_MAX_ITER,
                  grad_tol: float = GN_GRAD_TOL) -> tuple[np.ndarray, int]:
    """Plain Gauss-Newton with step halving; stops on a small scaled gradient or a stalled step."""
    x = np.array(x0, dtype=float)
    r = residual(x)
    cost = r @ r
    for it in range(max_iter):
        J = jacobian(x)
        grad = J.T @ r
        gnorm = np.linalg.norm(grad)
        if it == 0:
            g0 = gnorm
        # gradient test relative to the starting gradient
        if cost == 0 or gnorm <= grad_tol * g0:
            return x, it
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        lam = 1.0
        while lam > 1e-6:
            x_new = x + lam * step
            r_new = residual(x_new)
            if r_new @ r_new <= cost:
                break
            lam /= 2
        else:
            return x, it
        if np.linalg.norm(x_new - x) <= 1e-15 * max(1.0, np.linalg.norm(x)):
            return x_new, it + 1
        x, r, cost = x_new, r_new, r_new @ r_new
    return x, max_iter


# --------------------------------------------------------------------------
# equation families


def _family_terms(F: dict, family: str, gt: float, detuning2: float, g2: float) -> list[np.ndarray]:
    if family == "A":
        p0, p1, p2, c0, c1 = F["dphi0"], F["dphi1"], F["dphi2"], F["dchi0"], F["dchi1"]
    else:
        p0, p1, p2, c0, c1 = F["Phi0"], F["Phi1"], F["Phi2"], F["X0"] + 1.0, F["X1"]
    return [p2, gt * p1, (gt ** 2 / 4 + detuning2) * p0, 4 * g2 * c1, 2 * g2 * gt * c0]


def _family_jacobian(F: dict, family: str, gt: float, detuning2: float, g2: float):
    """Columns ``d/dGt``, ``d/d detuning^2``, ``d/d g^2``."""
    if family == "A":
        p0, p1, c0, c1 = F["dphi0"], F["dphi1"], F["dchi0"], F["dchi1"]
    else:
        p0, p1, c0, c1 = F["Phi0"], F["Phi1"], F["X0"] + 1.0, F["X1"]
    return p1 + gt / 2 * p0 + 2 * g2 * c0, p0, 4 * c1 + 2 * gt * c0


def _vanishes(F: dict, family: str, ref: float) -> bool:
    keys = [k for k in F if k.startswith("dphi" if family == "A" else "Phi")]
    return max(np.max(np.abs(F[k])) for k in keys) <= VANISH_TOL * max(ref, 1e-300)


def _polish(F: dict, families: list[str], params: dict, free: list[str], gt_fixed: float | None):
    """Gauss-Newton on the stacked families over the ``free`` parameter names.

    ``params`` holds ``Gt, d2_A, g2_A, d2_B, g2_B``; returns an updated copy.
    """
    names = list(free)

    def unpack(x):
        p = dict(params)
        p.update(zip(names, x))
        if gt_fixed is not None:
            p["Gt"] = gt_fixed
        return p

    def residual(x):
        p = unpack(x)
        return np.concatenate([sum(_family_terms(F, fam, p["Gt"], p["d2_" + fam], p["g2_" + fam]))
                               for fam in families])

    def jacobian(x):
        p = unpack(x)
        blocks = []
        for fam in families:
            dgt, dd, dg = _family_jacobian(F, fam, p["Gt"], p["d2_" + fam], p["g2_" + fam])
            cols = {"Gt": dgt, "d2_" + fam: dd, "g2_" + fam: dg}
            zero = np.zeros_like(dgt)
            blocks.append(np.column_stack([cols.get(n, zero) for n in names]))
        return np.vstack(blocks)

    x0 = np.array([params[n] for n in names])
    x, _ = _gauss_newton(residual, jacobian, x0)
    return unpack(x)


def _residual_report(F: dict, families: list[str], p: dict) -> np.ndarray:
    return np.concatenate([_relative_residuals(_family_terms(F, fam, p["Gt"], p["d2_" + fam],
                                                             p["g2_" + fam]))
                           for fam in families])


# --------------------------------------------------------------------------
# estimators


def estimate_g_res_gamma_tilde(problem: EstimationProblem) -> EstimationResult:
    """``(g_res, Gt)`` when ``delta = 0`` and ``g_off = 0``.

    Uses ``phi_L' + (Gt/2) phi_L + 2 g^2 (chi_L - chi_R) = 0`` and its
    mirror for the right lead, linear in ``(Gt/2, 2 g^2)``.
    """
    problem.require("resonant_two", 2)
    pl, pr = problem.phi(0)
    dpl, dpr = problem.phi(1)
    cl, cr = problem.chi(0)
    dchi = cl - cr
    A = np.vstack([np.column_stack([pl, dchi]), np.column_stack([pr, -dchi])])
    b = -np.concatenate([dpl, dpr])
    x, cond = _scaled_lstsq(A, b, "g_res/Gt estimation")
    half_gt, two_g2 = x
    if two_g2 < 0:
        raise CaseAssumptionError(f"case assumption violated: fitted g_res^2 = {two_g2 / 2:.6g} < 0")
    if half_gt < 0:
        raise CaseAssumptionError(f"case assumption violated: fitted Gt = {2 * half_gt:.6g} < 0")
    res = np.concatenate([_relative_residuals([dpl, half_gt * pl, two_g2 * dchi]),
                          _relative_residuals([dpr, half_gt * pr, -two_g2 * dchi])])
    return EstimationResult({"g_res": math.sqrt(two_g2 / 2), "gamma_tilde": 2 * half_gt},
                            float(res.max()), cond, "resonant_two", tuple(res))


def estimate_degenerate(problem: EstimationProblem) -> EstimationResult:
    """``(g_res, g_off, Gt)`` when ``delta = E = 0``.

    First-order families ``dphi' + (Gt/2) dphi + 4 g^2 dchi = 0`` and
    ``Phi' + (Gt/2) Phi + 4 h^2 (X + 1) = 0`` share ``Gt``.
    """
    problem.require("degenerate", 2)
    F = problem.families(1)
    A = np.block([[F["dphi0"][:, None], F["dchi0"][:, None], np.zeros((problem.n_probes, 1))],
                  [F["Phi0"][:, None], np.zeros((problem.n_probes, 1)), (F["X0"] + 1)[:, None]]])
    b = -np.concatenate([F["dphi1"], F["Phi1"]])
    flags = []
    ref = np.max(np.abs(A))
    # a vanishing family carries no information on its coupling beyond zero
    if _vanishes(F, "A", ref):
        flags.append("alpha family vanishes: g_res = 0")
    if _vanishes(F, "B", ref):
        flags.append("beta family vanishes: g_off = 0")
    x, cond = _scaled_lstsq(A, b, "degenerate-case estimation")
    half_gt, g4, h4 = x
    g = _sqrt_checked(g4 / 4, abs(half_gt), "g_res^2", CaseAssumptionError)
    h = _sqrt_checked(h4 / 4, abs(half_gt), "g_off^2", CaseAssumptionError)
    res = np.concatenate([_relative_residuals([F["dphi1"], half_gt * F["dphi0"], g4 * F["dchi0"]]),
                          _relative_residuals([F["Phi1"], half_gt * F["Phi0"], h4 * (F["X0"] + 1)])])
    return EstimationResult({"g_res": g, "g_off": h, "gamma_tilde": 2 * half_gt},
                            float(res.max()), cond, "degenerate", tuple(res), (), tuple(flags))


def _lifted_family(F: dict, fam: str, gt: float | None):
    """Design block of one family in lifted unknowns.

    Unknown ``Gt``: columns ``[Gt, Gt^2/4 + d^2, 4 g^2, 2 g^2 Gt]``.
    Known ``Gt``: columns ``[d^2, g^2]`` with the ``Gt`` terms moved right.
    """
    if fam == "A":
        p0, p1, p2, c0, c1 = F["dphi0"], F["dphi1"], F["dphi2"], F["dchi0"], F["dchi1"]
    else:
        p0, p1, p2, c0, c1 = F["Phi0"], F["Phi1"], F["Phi2"], F["X0"] + 1.0, F["X1"]
    if gt is None:
        return np.column_stack([p1, p0, c1, c0]), -p2
    return np.column_stack([p0, 4 * c1 + 2 * gt * c0]), -(p2 + gt * p1 + gt ** 2 / 4 * p0)


def _back_solve(x: np.ndarray, families: list[str], gt: float | None) -> dict:
    p = {}
    if gt is None:
        Gt = x[0]
        if Gt <= 0:
            raise InconsistentDataError(f"inconsistent probe data: fitted Gt = {Gt:.6g} <= 0")
        p["Gt"] = Gt
        for i, fam in enumerate(families):
            a, g4, q = x[1 + 3 * i: 4 + 3 * i]
            p["d2_" + fam] = a - Gt ** 2 / 4
            p["g2_" + fam] = g4 / 4
            p["q_" + fam] = q / (2 * Gt)
    else:
        p["Gt"] = gt
        for i, fam in enumerate(families):
            p["d2_" + fam], p["g2_" + fam] = x[2 * i: 2 * i + 2]
    return p


def _solve_families(F: dict, families: list[str], gt: float | None, n_probes: int,
                    what: str) -> tuple[dict, float]:
    blocks, rhs = [], []
    for fam in families:
        Ab, bb = _lifted_family(F, fam, gt)
        blocks.append(Ab)
        rhs.append(bb)
    if gt is None:
        # shared Gt column first, then 3 private columns per family
        cols = 1 + 3 * len(families)
        A = np.zeros((n_probes * len(families), cols))
        for i, Ab in enumerate(blocks):
            rows = slice(i * n_probes, (i + 1) * n_probes)
            A[rows, 0] = Ab[:, 0]
            A[rows, 1 + 3 * i: 4 + 3 * i] = Ab[:, 1:]
    else:
        A = np.zeros((n_probes * len(families), 2 * len(families)))
        for i, Ab in enumerate(blocks):
            A[i * n_probes:(i + 1) * n_probes, 2 * i: 2 * i + 2] = Ab
    x, cond = _scaled_lstsq(A, np.concatenate(rhs), what)
    return _back_solve(x, families, gt), cond


def _varpro_gt(F: dict, families: list[str], Gamma: float) -> float:
    """Initial ``Gt`` from the profile residual when lifting is underdetermined.

    For fixed ``Gt`` the families are linear in ``(d^2, g^2)``; the profile
    residual is normalized by the ``Gt``-free second-derivative terms so its
    scale does not drift with ``Gt``. Every local minimum on a log grid is
    refined and the best one with ``d^2, g^2 >= 0`` is kept.
    """
    grid = Gamma * np.geomspace(0.05, 200.0, 400)
    norm = sum(float(F[("dphi2" if fam == "A" else "Phi2")] @ F[("dphi2" if fam == "A" else "Phi2")])
               for fam in families)

    def solve(gt):
        total, params = 0.0, []
        for fam in families:
            Ab, bb = _lifted_family(F, fam, gt)
            x, *_ = np.linalg.lstsq(Ab, bb, rcond=None)
            r = Ab @ x - bb
            total += r @ r
            params.extend(x)
        return total / max(norm, 1e-300), np.array(params)

    vals = np.array([solve(g)[0] for g in grid])
    candidates = []
    for i in range(len(grid)):
        if (i == 0 or vals[i] <= vals[i - 1]) and (i == len(grid) - 1 or vals[i] <= vals[i + 1]):
            lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
            gt = float(minimize_scalar(lambda g: solve(g)[0], bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-14 * hi}).x)
            val, params = solve(gt)
            tol = -NEGATIVE_TOL * gt ** 2
            if np.all(params >= tol):
                candidates.append((val, gt))
    if not candidates:
        raise InconsistentDataError("inconsistent probe data: no admissible Gt on the profile scan")
    return min(candidates)[1]


def estimate_general(problem: EstimationProblem, gamma_tilde: float | None = None,
                     families: tuple[str, ...] | None = None, polish: bool = True) -> EstimationResult:
    """``g_res, g_off, delta, E`` (and ``Gt`` unless given) from both families.

    The families are solved as a linear least-squares problem in lifted
    variables, back-solved to physical parameters and refined by
    Gauss-Newton on the original nonlinear equations. A family whose
    combination vanishes identically (zero coupling) is dropped and its
    coupling is reported as zero with the detuning unidentifiable.
    ``families`` restricts the fit, e.g. ``("A",)`` for ``g_off = 0``.
    """
    known = gamma_tilde is not None
    case = "general_known_gamma" if known else "general"
    if families == ("A",):
        case = "resonant"
    problem.require(case, 3)
    F = problem.families(2)
    ref = max(np.max(np.abs(v)) for v in F.values())
    fams = list(families or ("A", "B"))
    values, unident, flags = {}, [], []
    for fam, g_name, d_name in (("A", "g_res", "delta"), ("B", "g_off", "energy")):
        if fam in fams and _vanishes(F, fam, ref):
            fams.remove(fam)
            flags.append(f"{g_name} family vanishes: {g_name} = 0, {d_name} unidentifiable")
        if fam not in fams:
            values[g_name] = 0.0
            values[d_name] = math.nan
            unident.append(d_name)
    if not fams:
        raise ConditioningError("both equation families vanish: no parameter information")

    n = problem.n_probes
    n_lifted = (0 if known else 1) + (2 if known else 3) * len(fams)
    Gamma = sum(problem.rates_l) + sum(problem.rates_r)
    if n * len(fams) >= n_lifted:
        try:
            p, cond = _solve_families(F, fams, gamma_tilde, n, "parameter estimation")
        except ConditioningError:
            if known:
                raise
            p, cond = None, math.inf
    else:
        p, cond = None, math.inf
    if p is None:
        # too few rows for the lifted unknowns: profile over Gt instead
        gt0 = _varpro_gt(F, fams, Gamma)
        p, cond = _solve_families(F, fams, gt0, n, "parameter estimation")
        flags.append("Gt initialized by profile scan")
    if polish:
        free = ([] if known else ["Gt"]) + [f"{k}_{fam}" for fam in fams for k in ("d2", "g2")]
        p = _polish(F, fams, p, free, gamma_tilde)
    res = _residual_report(F, fams, p)
    scale = p["Gt"] ** 2
    for fam, g_name, d_name in (("A", "g_res", "delta"), ("B", "g_off", "energy")):
        if fam in fams:
            values[g_name] = _sqrt_checked(p["g2_" + fam], scale, g_name + "^2")
            values[d_name] = _sqrt_checked(p["d2_" + fam], scale, d_name + "^2")
    if p["Gt"] <= 0:
        raise InconsistentDataError(f"inconsistent probe data: Gt = {p['Gt']:.6g} <= 0")
    values["gamma_tilde"] = float(p["Gt"])
    return EstimationResult(values, float(res.max()), float(cond), case, tuple(res),
                            tuple(unident), tuple(flags))


def estimate_resonant(problem: EstimationProblem, gamma_tilde: float | None = None) -> EstimationResult:
    """``g_res, delta, Gt`` when ``g_off = 0`` (alpha family only)."""
    return estimate_general(problem, gamma_tilde=gamma_tilde, families=("A",))


def gamma_z_from_gamma_tilde(gamma_tilde: float, config: SystemConfig) -> float:
    """Total dephasing rate ``Gamma_z = gamma_z,L + gamma_z,R`` implied by ``Gt = Gamma + 2 Gamma_z``."""
    return (gamma_tilde - config.Gamma) / 2


# --------------------------------------------------------------------------
# Krylov closure


@dataclass(frozen=True)
class Closure:
    """Linear relation ``offset + sum_k coefficients[k] p_k(t) = 0``.

    ``p_k = Tr[n_P L^k rho]`` and ``coefficients[-1] = -1``. The offset is
    nonzero only for the affine form, where the identity (known trace) is
    allowed in the span.
    """

    coefficients: np.ndarray = field(repr=False)
    offset: float
    dimension: int
    condition: float
    affine: bool

    @property
    def ill_conditioned(self) -> bool:
        return self.condition > CLOSURE_COND_MAX

    def residual(self, p: np.ndarray) -> float:
        p = np.asarray(p)
        return float(self.offset + self.coefficients @ p[: self.dimension + 1])


def krylov_closure_coefficients(L: Superoperator, seed, affine: bool = False,
                                tol: float = CLOSURE_TOL) -> Closure:
    """Closure of the power sequence ``L^+^k n_P`` at the Krylov dimension.

    Finds the first ``K`` with ``L^+^K n_P`` in the span of the lower
    powers (and of the identity when ``affine``) and expresses it in that
    span by least squares on column-normalized vectors.
    """
    Ld = (adjoint(L) if L.tag == "lindbladian" else L).matrix
    u = np.asarray(seed, dtype=complex)
    u = vectorize(u) if u.ndim == 2 else u.copy()
    d = int(round(math.sqrt(len(u))))
    ident = vectorize(np.eye(d, dtype=complex))
    powers = [u]
    Q = np.zeros((len(u), 0), dtype=complex)
    if affine:
        Q, _ = orth_extend(Q, ident, tol)
    Q, added = orth_extend(Q, u, tol)
    if not added:
        raise ValidationError("seed is zero or (affine) proportional to the identity")
    while True:
        w = Ld @ powers[-1]
        scale = np.linalg.norm(w)
        r = w - Q @ (Q.conj().T @ w)
        r -= Q @ (Q.conj().T @ r)
        if np.linalg.norm(r) <= tol * max(scale, 1e-300) or Q.shape[1] >= len(u):
            break
        Q = np.column_stack([Q, r / np.linalg.norm(r)])
        powers.append(w)
    K = len(powers)
    basis = ([ident] if affine else []) + powers
    B = np.column_stack(basis)
    norms = np.linalg.norm(B, axis=0)
    norms[norms == 0] = 1.0
    s = np.linalg.svd(B / norms, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else math.inf
    x, *_ = np.linalg.lstsq(B / norms, w, rcond=None)
    x = x / norms
    if np.max(np.abs(x.imag)) > 1e-8 * max(1.0, np.max(np.abs(x))):
        raise ValidationError("closure coefficients are not real; seed is not Hermitian")
    x = x.real
    offset = float(x[0]) if affine else 0.0
    c = x[1:] if affine else x
    return Closure(np.append(c, -1.0), offset, K, float(cond), affine)
