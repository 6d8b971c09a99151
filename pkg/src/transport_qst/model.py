"""Domain types, basis conventions and row-wise vectorization.

Conventions used throughout the package:

* Qubit 0 (``L``) is the left tensor factor; the Fock basis is ordered
  lexicographically, ``|00>, |01>, |10>, |11>`` for two qubits, with
  ``|1>`` the occupied state of a qubit.
* Operators are vectorized row-wise: element ``(i, j)`` of a ``d x d``
  matrix lands at index ``i * d + j`` and the map ``rho -> A rho B`` becomes
  the matrix ``kron(A, B.T)``.
* Energies and rates share one unit with ``hbar = k_B = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
POSITIVITY_TOL = -1e-10

FERMIONIC = "fermionic"
BOSONIC = "bosonic"


class TransportQSTError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(TransportQSTError, ValueError):
    """Invalid physical input (rates, states, configuration)."""


class InconsistentDataError(TransportQSTError):
    """Transport data violate an identity they must satisfy."""


class ConditioningError(TransportQSTError):
    """A linear system is singular or too ill-conditioned to solve."""


class CaseAssumptionError(TransportQSTError):
    """Data or parameters contradict the special case a formula assumes."""


# --------------------------------------------------------------------------
# bath rates


def fermi(x: float) -> float:
    """Fermi function of ``x = (eps - mu) / T``, overflow-safe."""
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


def bose(x: float) -> float:
    if x <= 0:
        raise ValidationError("divergent bosonic occupation (eps <= mu)")
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class BathSpec:
    """Thermal reservoir attached to one qubit.

    Either give ``gamma_bare`` and ``temperature`` (rates follow from the
    bath occupation at the qubit energy) or the explicit pair
    ``gamma_plus``/``gamma_minus``.
    """

    statistics: str = FERMIONIC
    gamma_bare: float | None = None
    temperature: float | None = None
    chem_potential: float = 0.0
    gamma_plus: float | None = None
    gamma_minus: float | None = None

    def __post_init__(self):
        if self.statistics not in (FERMIONIC, BOSONIC):
            raise ValidationError(f"unknown bath statistics {self.statistics!r}")
        explicit = (self.gamma_plus, self.gamma_minus)
        if any(v is not None for v in explicit):
            if any(v is None for v in explicit):
                raise ValidationError("explicit rates need both gamma_plus and gamma_minus")
            if min(explicit) < 0:
                raise ValidationError("rates must be non-negative")
        else:
            if self.gamma_bare is None or self.temperature is None:
                raise ValidationError("bath needs (gamma_bare, temperature) or explicit rates")
            if self.gamma_bare < 0:
                raise ValidationError("gamma_bare must be non-negative")
            if not self.temperature > 0:
                raise ValidationError("temperature must be positive")

    @property
    def explicit(self) -> bool:
        return self.gamma_plus is not None

    @classmethod
    def from_rates(cls, gamma_plus: float, gamma_minus: float) -> BathSpec:
        return cls(gamma_plus=float(gamma_plus), gamma_minus=float(gamma_minus))


def bath_rates(spec: BathSpec, eps_j: float) -> tuple[float, float]:
    """In/out tunnelling rates ``(gamma_plus, gamma_minus)`` of a bath.

    Fermions: ``g+ = g n_F``, ``g- = g (1 - n_F)``; bosons: ``g+ = g n_B``,
    ``g- = g (1 + n_B)``, with the occupation evaluated at ``eps_j``.
    """
    if spec.explicit:
        return float(spec.gamma_plus), float(spec.gamma_minus)
    x = (eps_j - spec.chem_potential) / spec.temperature
    g = float(spec.gamma_bare)
    if spec.statistics == FERMIONIC:
        n = fermi(x)
        # 1 - n_F(x) = n_F(-x) avoids cancellation at large negative x
        return g * n, g * fermi(-x)
    if eps_j <= spec.chem_potential:
        raise ValidationError(
            f"divergent bosonic occupation: eps={eps_j} <= mu={spec.chem_potential}")
    n = bose(x)
    return g * n, g * (1.0 + n)


# --------------------------------------------------------------------------
# system configuration


def _as_tuple(values, n: int, name: str, default: float = 0.0) -> tuple[float, ...]:
    if values is None:
        return (default,) * n
    values = tuple(float(v) for v in np.atleast_1d(values))
    if len(values) != n:
        raise ValidationError(f"{name} needs {n} entries, got {len(values)}")
    return values


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of an ``N``-qubit chain with local baths.

    For ``N > 2`` the interaction terms (``u_int``, ``g_res``, ``g_off``)
    act on nearest-neighbour pairs ``(j, j + 1)``; for two qubits this is the
    usual ``L``-``R`` pair. ``baths[j] is None`` leaves qubit ``j`` closed.
    """

    eps: tuple[float, ...]
    baths: tuple[BathSpec | None, ...]
    u_int: float = 0.0
    g_res: float = 0.0
    g_off: float = 0.0
    drive: tuple[float, ...] | None = None
    gamma_z: tuple[float, ...] | None = None

    def __post_init__(self):
        eps = tuple(float(e) for e in np.atleast_1d(self.eps))
        n = len(eps)
        if n < 1:
            raise ValidationError("need at least one qubit")
        baths = tuple(self.baths)
        if len(baths) != n:
            raise ValidationError(f"baths needs {n} entries (None for closed qubits)")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "baths", baths)
        object.__setattr__(self, "drive", _as_tuple(self.drive, n, "drive"))
        gz = _as_tuple(self.gamma_z, n, "gamma_z")
        if min(gz) < 0:
            raise ValidationError("dephasing rates must be non-negative")
        object.__setattr__(self, "gamma_z", gz)
        for name in ("u_int", "g_res", "g_off"):
            v = getattr(self, name)
            if isinstance(v, complex) or not np.isfinite(v):
                raise ValidationError(f"{name} must be a finite real number")
            object.__setattr__(self, name, float(v))
        # evaluating the rates validates the bosonic eps > mu condition
        object.__setattr__(self, "_rates", tuple(
            bath_rates(b, e) if b is not None else (0.0, 0.0) for b, e in zip(baths, eps)))

    @classmethod
    def two_qubit(cls, *, eps_l=0.0, eps_r=0.0, rates_l=(0.0, 0.0), rates_r=(0.0, 0.0),
                  u_int=0.0, g_res=0.0, g_off=0.0, drive=None, gamma_z=None) -> SystemConfig:
        """Two qubits with explicit ``(gamma_plus, gamma_minus)`` per lead."""
        return cls(eps=(eps_l, eps_r),
                   baths=(BathSpec.from_rates(*rates_l), BathSpec.from_rates(*rates_r)),
                   u_int=u_int, g_res=g_res, g_off=g_off, drive=drive, gamma_z=gamma_z)

    @property
    def n_qubits(self) -> int:
        return len(self.eps)

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @property
    def coupled(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.baths) if b is not None)

    @property
    def gamma_plus(self) -> np.ndarray:
        return np.array([r[0] for r in self._rates])

    @property
    def gamma_minus(self) -> np.ndarray:
        return np.array([r[1] for r in self._rates])

    @property
    def gamma_total(self) -> np.ndarray:
        """Per-qubit ``Gamma_j = gamma_j^+ + gamma_j^-``."""
        return self.gamma_plus + self.gamma_minus

    # two-qubit derived quantities
    @property
    def delta(self) -> float:
        return self.eps[0] - self.eps[1]

    @property
    def energy_doubly(self) -> float:
        """``E``: energy of the doubly occupied state."""
        return sum(self.eps[:2]) + self.u_int

    @property
    def Gamma(self) -> float:
        return float(self.gamma_total.sum())

    @property
    def Gamma_z(self) -> float:
        return float(sum(self.gamma_z))

    @property
    def Gamma_tilde(self) -> float:
        return self.Gamma + 2.0 * self.Gamma_z

    def rates(self, j: int) -> tuple[float, float]:
        return self._rates[j]

    def label(self, j: int) -> str:
        return qubit_label(j, self.n_qubits)


def qubit_label(j: int, n_qubits: int) -> str:
    if n_qubits == 2:
        return "LR"[j]
    return str(j)


def subsets(indices) -> list[tuple[int, ...]]:
    """All non-empty subsets, ordered by size then lexicographically."""
    indices = tuple(indices)
    return [c for r in range(1, len(indices) + 1) for c in combinations(indices, r)]


def subset_label(P, n_qubits: int) -> str:
    return " ".join(f"n_{qubit_label(j, n_qubits)}" for j in P)


def validity_check(config: SystemConfig) -> list[str]:
    """Advisory warnings about the weak-coupling regime of the local master equation."""
    warnings = []
    scales = []
    couplings = []
    for j in config.coupled:
        b = config.baths[j]
        couplings.append(b.gamma_bare if not b.explicit else b.gamma_plus + b.gamma_minus)
        if not b.explicit:
            scales += [("T", j, b.temperature), ("|eps-mu|", j, abs(config.eps[j] - b.chem_potential))]
    for j, g in zip(config.coupled, couplings):
        for name, k, s in scales:
            if s == 0 or g / s > 0.1:
                warnings.append(
                    f"weak-coupling: gamma_{config.label(j)}={g:g} not << {name}_{config.label(k)}={s:g}")
    gmax = max(couplings, default=0.0)
    for name in ("g_res", "g_off"):
        g = abs(getattr(config, name))
        if g > 2.0 * gmax and g > 0:
            warnings.append(f"interaction-strength: {name}={g:g} exceeds 2*max(gamma)={2 * gmax:g}")
    return warnings


# --------------------------------------------------------------------------
# operators and vectorization

SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |1><0|
SIGMA_MINUS = SIGMA_PLUS.T.copy()
NUMBER = np.diag([0.0, 1.0]).astype(complex)
SIGMA_Z = np.diag([-1.0, 1.0]).astype(complex)


def embed(op: np.ndarray, j: int, n_qubits: int) -> np.ndarray:
    """Single-qubit ``op`` acting on qubit ``j`` of an ``n_qubits`` register."""
    factors = [np.eye(2, dtype=complex)] * n_qubits
    factors[j] = op
    return reduce(np.kron, factors)


def sigma_plus(j, n_qubits):
    return embed(SIGMA_PLUS, j, n_qubits)


def sigma_minus(j, n_qubits):
    return embed(SIGMA_MINUS, j, n_qubits)


def number_op(j, n_qubits):
    return embed(NUMBER, j, n_qubits)


def sigma_z(j, n_qubits):
    return embed(SIGMA_Z, j, n_qubits)


def occupation_projector(P, n_qubits: int) -> np.ndarray:
    """``n_P``: product of number operators of the qubits in ``P``."""
    d = 2 ** n_qubits
    out = np.eye(d, dtype=complex)
    for j in P:
        out = out @ number_op(j, n_qubits)
    return out


def vectorize(M) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"vectorize needs a square matrix, got shape {M.shape}")
    return M.reshape(-1).astype(complex)


def devectorize(v) -> np.ndarray:
    v = np.asarray(v)
    d = math.isqrt(v.size)
    if d * d != v.size:
        raise ValidationError(f"length {v.size} is not a square")
    return v.reshape(d, d)


def hs_inner(A, B) -> complex:
    """Hilbert-Schmidt product ``Tr[A^dagger B]``."""
    return complex(np.vdot(np.asarray(A), np.asarray(B)))


def sprepost(A, B) -> np.ndarray:
    """Matrix of the map ``rho -> A rho B`` in the row-wise convention."""
    return np.kron(A, np.asarray(B).T)


def spre(A):
    return sprepost(A, np.eye(A.shape[0]))


def spost(B):
    return sprepost(np.eye(B.shape[0]), B)


def dissipator(A) -> np.ndarray:
    """``D[A] rho = A rho A^+ - {A^+ A, rho} / 2`` as a matrix."""
    A = np.asarray(A, dtype=complex)
    AdA = A.conj().T @ A
    return sprepost(A, A.conj().T) - 0.5 * (spre(AdA) + spost(AdA))


# --------------------------------------------------------------------------
# density operators

ELEMENT_INDEX = {
    "r00": (0, 0), "r01": (1, 1), "r10": (2, 2), "r11": (3, 3),
    "alpha": (1, 2), "beta": (0, 3),
    "v": (0, 1), "x": (0, 2), "y": (1, 3), "z": (2, 3),
}


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Validated density matrix (Hermitian, unit trace, positive)."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] & (m.shape[0] - 1):
            raise ValidationError(f"density matrix must be 2^N x 2^N, got {m.shape}")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITIAN_TOL:
            raise ValidationError(f"not Hermitian (deviation {herm:.3g})")
        tr = np.trace(m)
        if abs(tr - 1) > TRACE_TOL:
            raise ValidationError(f"trace {tr.real:.15g} != 1")
        lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()
        if lam < POSITIVITY_TOL:
            raise ValidationError(f"negative eigenvalue {lam:.3g}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.dim.bit_length() - 1

    def vec(self) -> np.ndarray:
        return vectorize(self.matrix)

    def element(self, name: str) -> complex:
        if self.dim != 4:
            raise ValidationError("named elements exist for two qubits only")
        return complex(self.matrix[ELEMENT_INDEX[name]])

    def __getattr__(self, name):
        if name in ELEMENT_INDEX:
            value = self.element(name)
            return value.real if name.startswith("r") else value
        raise AttributeError(name)

    @classmethod
    def from_vec(cls, v, *, symmetrize=True) -> DensityOperator:
        m = devectorize(v)
        if symmetrize:
            m = 0.5 * (m + m.conj().T)
        return cls(m)


def basis_state(label: str) -> DensityOperator:
    """Projector onto a Fock state given as a bit string, e.g. ``"01"``."""
    d = 2 ** len(label)
    m = np.zeros((d, d), dtype=complex)
    i = int(label, 2)
    m[i, i] = 1
    return DensityOperator(m)


def pure_state(psi) -> DensityOperator:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return DensityOperator(np.outer(psi, psi.conj()))


def bell_state(name: str) -> DensityOperator:
    """Bell projector with exact entries ``+-1/2``."""
    support = {"psi_plus": (1, 2, 1), "psi_minus": (1, 2, -1),
               "phi_plus": (0, 3, 1), "phi_minus": (0, 3, -1)}
    if name not in support:
        raise ValidationError(f"unknown Bell state {name!r}")
    i, j, sign = support[name]
    m = np.zeros((4, 4), dtype=complex)
    m[i, i] = m[j, j] = 0.5
    m[i, j] = m[j, i] = 0.5 * sign
    return DensityOperator(m)


def maximally_mixed(n_qubits: int = 2) -> DensityOperator:
    d = 2 ** n_qubits
    return DensityOperator(np.eye(d, dtype=complex) / d)


def random_density(n_qubits: int = 2, rng=None, rank: int | None = None) -> DensityOperator:
    """Random state ``G G^+ / Tr`` with a complex Gaussian ``G`` (Ginibre)."""
    rng = np.random.default_rng(rng)
    d = 2 ** n_qubits
    rank = d if rank is None else rank
    G = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = G @ G.conj().T
    m = m / np.trace(m).real
    return DensityOperator(0.5 * (m + m.conj().T))
