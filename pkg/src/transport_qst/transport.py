"""Current and activity superoperators and the transport observables built on them.

All derivatives ``I^(k)`` are exact: they come from applying the Lindbladian
``k`` times to the state, never from finite differences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .lindblad import Propagator, Superoperator
from .model import (
    DensityOperator,
    InconsistentDataError,
    SystemConfig,
    ValidationError,
    sigma_minus,
    sigma_plus,
    sprepost,
    vectorize,
)

IMAG_TOL = 1e-9
K_MAX = 3


def _state_vec(rho) -> np.ndarray:
    if isinstance(rho, DensityOperator):
        return rho.vec()
    rho = np.asarray(rho)
    return vectorize(rho) if rho.ndim == 2 else rho.astype(complex)


def _trace_vec(v: np.ndarray) -> complex:
    d = int(round(np.sqrt(v.size)))
    return v[:: d + 1].sum()


def _check_coupled(j: int, config: SystemConfig):
    if j not in config.coupled:
        raise ValidationError(f"qubit {j} is not coupled to a bath")


def jump_superoperators(j: int, config: SystemConfig) -> tuple[Superoperator, Superoperator]:
    """``(L_j^+, L_j^-)``: tunnelling into and out of qubit ``j``."""
    _check_coupled(j, config)
    n = config.n_qubits
    gp, gm = config.rates(j)
    sp, sm = sigma_plus(j, n), sigma_minus(j, n)
    return (Superoperator(gp * sprepost(sp, sm), "jump_plus", j),
            Superoperator(gm * sprepost(sm, sp), "jump_minus", j))


def current_superoperator(j: int, config: SystemConfig) -> Superoperator:
    plus, minus = jump_superoperators(j, config)
    return Superoperator(plus.matrix - minus.matrix, "current", j)


def activity_superoperator(j: int, config: SystemConfig) -> Superoperator:
    plus, minus = jump_superoperators(j, config)
    return Superoperator(plus.matrix + minus.matrix, "activity", j)


def _real(value: complex, what: str) -> float:
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise InconsistentDataError(f"{what} has imaginary part {value.imag:.3g}")
    return float(value.real)


def current_moment(P, k: int, rho, L: Superoperator, config: SystemConfig) -> float:
    """``I_P^(k) = Tr[prod_{j in P} I_j L^k rho]``."""
    P = tuple(P)
    if not P:
        raise ValidationError("P must be non-empty")
    if k < 0:
        raise ValidationError("k must be >= 0")
    w = _state_vec(rho)
    for _ in range(k):
        w = L.matrix @ w
    for j in P:
        w = current_superoperator(j, config).matrix @ w
    return _real(_trace_vec(w), f"I_{P}^({k})")


class MomentEvaluator:
    """Evaluates every current moment of a state in one pass.

    Caches the current superoperators of a config so that repeated calls
    along a trajectory only cost a handful of matrix-vector products.
    """

    def __init__(self, L: Superoperator, config: SystemConfig):
        self.L = L
        self.config = config
        self.currents = {j: current_superoperator(j, config).matrix for j in config.coupled}
        self.activities = {j: activity_superoperator(j, config).matrix for j in config.coupled}

    def derivatives(self, rho, k_max: int = K_MAX) -> list[np.ndarray]:
        w = _state_vec(rho)
        out = [w]
        for _ in range(k_max):
            out.append(self.L.matrix @ out[-1])
        return out

    def moments(self, rho, k_max: int = K_MAX, subsets=None) -> dict[tuple[int, ...], np.ndarray]:
        """``{P: [I_P^(0), ..., I_P^(k_max)]}``; ``P = ()`` holds ``Tr[L^k rho]``."""
        ws = self.derivatives(rho, k_max)
        if subsets is None:
            coupled = self.config.coupled
            subsets = [c for r in range(len(coupled) + 1) for c in combinations(coupled, r)]
        out = {}
        for P in subsets:
            vals = []
            for k, w in enumerate(ws):
                for j in P:
                    w = self.currents[j] @ w
                vals.append(_real(_trace_vec(w), f"I_{P}^({k})"))
            out[tuple(P)] = np.array(vals)
        return out

    def activity(self, rho, j: int) -> float:
        return _real(_trace_vec(self.activities[j] @ _state_vec(rho)), f"A_{j}")


def cross_correlation(rho, L: Superoperator, config: SystemConfig, pair=(0, 1)) -> float:
    """Instantaneous ``S_LR = I_LR - I_L I_R``."""
    i, j = pair
    return (current_moment((i, j), 0, rho, L, config)
            - current_moment((i,), 0, rho, L, config) * current_moment((j,), 0, rho, L, config))


def activity(rho, j: int, config: SystemConfig) -> float:
    return _real(_trace_vec(activity_superoperator(j, config).matrix @ _state_vec(rho)), f"A_{j}")


@dataclass(frozen=True)
class TwoTimeCorrelation:
    """``S_{j1 j2}(t1, t2)`` split into its regular part and the equal-time singular term.

    ``delta_coefficient`` multiplies ``delta(t1 - t2)``; it is the activity
    ``A_{j1}(t1)`` for auto-correlations and ``None`` otherwise.
    """

    regular: float
    delta_coefficient: float | None = None

    @property
    def has_delta(self) -> bool:
        return self.delta_coefficient is not None


def two_time_correlation(j1: int, t1: float, j2: int, t2: float, rho_path, L: Superoperator,
                         config: SystemConfig, propagator: Propagator | None = None) -> TwoTimeCorrelation:
    """Two-time current correlation from full counting statistics.

    ``rho_path`` maps a time to the state at that time. At ``t1 == t2`` both
    time orderings carry weight ``1/2``.
    """
    prop = propagator or Propagator(L)
    I1 = current_superoperator(j1, config).matrix
    I2 = current_superoperator(j2, config).matrix
    v1 = _state_vec(rho_path(t1))
    v2 = _state_vec(rho_path(t2)) if t2 != t1 else v1

    def ordered(Ia, Ib, v, dt):
        w = prop.evolve_vec(Ib @ v, dt) if dt > 0 else Ib @ v
        return _trace_vec(Ia @ w)

    if t1 > t2:
        joint = ordered(I1, I2, v2, t1 - t2)
    elif t2 > t1:
        joint = ordered(I2, I1, v1, t2 - t1)
    else:
        joint = 0.5 * (ordered(I1, I2, v1, 0.0) + ordered(I2, I1, v1, 0.0))
    regular = _real(joint, "two-time correlation") - (
        _real(_trace_vec(I1 @ v1), "I") * _real(_trace_vec(I2 @ v2), "I"))
    delta = None
    if j1 == j2:
        delta = activity(rho_path(t1), j1, config)
    return TwoTimeCorrelation(regular, delta)


def internal_current(rho, config: SystemConfig) -> tuple[float, float]:
    """Inter-qubit particle current ``I_S`` and pair production ``P_S``."""
    if config.n_qubits != 2:
        raise ValidationError("internal current is defined for two qubits")
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    return -2.0 * config.g_res * m[1, 2].imag, 2.0 * config.g_off * m[0, 3].imag


# --------------------------------------------------------------------------
# time-resolved records

DERIV_PREFIX = ("", "d", "d2", "d3", "d4", "d5")


def transport_columns(k_max: int = K_MAX) -> list[str]:
    cols = ["time"]
    for name in ("I_L", "I_R", "I_LR"):
        cols += [DERIV_PREFIX[k] + name for k in range(k_max + 1)]
    return cols + ["S_LR", "A_L", "A_R", "I_S", "P_S"]


@dataclass(frozen=True, eq=False)
class TransportRecord:
    """Two-lead transport data on a time grid.

    ``I_L``, ``I_R`` and ``I_LR`` have shape ``(n_times, k_max + 1)``; column
    ``k`` is the ``k``-th time derivative.
    """

    times: np.ndarray
    I_L: np.ndarray
    I_R: np.ndarray
    I_LR: np.ndarray
    A_L: np.ndarray
    A_R: np.ndarray
    I_S: np.ndarray | None = None
    P_S: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def k_max(self) -> int:
        return self.I_L.shape[1] - 1

    @property
    def S_LR(self) -> np.ndarray:
        return self.I_LR[:, 0] - self.I_L[:, 0] * self.I_R[:, 0]

    def __len__(self):
        return len(self.times)

    def row(self, i: int) -> dict:
        return {"time": float(self.times[i]), "I_L": self.I_L[i], "I_R": self.I_R[i],
                "I_LR": self.I_LR[i], "S_LR": float(self.S_LR[i])}

    def to_rows(self) -> tuple[list[str], np.ndarray]:
        k = self.k_max
        nan = np.full(len(self.times), np.nan)
        data = np.column_stack([
            self.times, self.I_L, self.I_R, self.I_LR, self.S_LR, self.A_L, self.A_R,
            self.I_S if self.I_S is not None else nan,
            self.P_S if self.P_S is not None else nan,
        ])
        return transport_columns(k), data

    def to_csv(self, path) -> None:
        cols, data = self.to_rows()
        write_csv(path, cols, data)

    @classmethod
    def from_csv(cls, path) -> TransportRecord:
        cols, data = read_csv(path)
        return cls.from_table(cols, data)

    @classmethod
    def from_table(cls, cols: list[str], data: np.ndarray) -> TransportRecord:
        idx = {c: i for i, c in enumerate(cols)}
        missing = [c for c in ("time", "I_L", "I_R") if c not in idx]
        if missing:
            raise ValidationError(f"missing columns: {', '.join(missing)}")

        def block(name):
            ks = []
            for k, pre in enumerate(DERIV_PREFIX):
                if pre + name not in idx:
                    break
                ks.append(data[:, idx[pre + name]])
            return ks

        IL, IR, ILR = block("I_L"), block("I_R"), block("I_LR")
        k = min(len(IL), len(IR))
        IL, IR = np.column_stack(IL[:k]), np.column_stack(IR[:k])
        if ILR:
            ILR = np.column_stack(ILR + [np.full(len(data), np.nan)] * (k - len(ILR)))[:, :k]
        elif "S_LR" in idx:
            ILR = np.full((len(data), k), np.nan)
            ILR[:, 0] = data[:, idx["S_LR"]] + IL[:, 0] * IR[:, 0]
        else:
            ILR = np.full((len(data), k), np.nan)

        def col(name):
            return data[:, idx[name]] if name in idx else None

        nan = np.full(len(data), np.nan)
        return cls(data[:, idx["time"]], IL, IR, ILR,
                   col("A_L") if "A_L" in idx else nan, col("A_R") if "A_R" in idx else nan,
                   col("I_S"), col("P_S"))


def transport_record(times, states, L: Superoperator, config: SystemConfig,
                     k_max: int = K_MAX) -> TransportRecord:
    """Exact transport data for a list of states (two coupled qubits)."""
    if config.coupled != (0, 1) or config.n_qubits != 2:
        raise ValidationError("transport records need two qubits, both bath-coupled")
    ev = MomentEvaluator(L, config)
    rows = []
    for rho in states:
        m = ev.moments(rho, k_max, subsets=[(0,), (1,), (0, 1)])
        IS, PS = internal_current(rho, config)
        rows.append((m[(0,)], m[(1,)], m[(0, 1)], ev.activity(rho, 0), ev.activity(rho, 1), IS, PS))
    IL, IR, ILR, AL, AR, IS, PS = (np.array(c) for c in zip(*rows))
    return TransportRecord(np.asarray(times, dtype=float), IL, IR, ILR, AL, AR, IS, PS)


# --------------------------------------------------------------------------
# CSV helpers (17 significant digits, fixed column order)


def format_float(x: float) -> str:
    return "%.17g" % x


def write_csv(path, columns, data) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in np.asarray(data, dtype=float):
            w.writerow([format_float(x) for x in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    data = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), len(header))
    return header, data
