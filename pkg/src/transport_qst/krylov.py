"""Krylov subspaces of occupation operators under the adjoint Lindbladian.

Operators are handled as row-wise vectorized columns; the Hilbert-Schmidt
product is the conjugate-linear dot product of those vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lindblad import Superoperator, adjoint
from .model import (
    ELEMENT_INDEX,
    SystemConfig,
    ValidationError,
    occupation_projector,
    subset_label,
    subsets,
    vectorize,
)

ARNOLDI_TOL = 1e-10
MEMBERSHIP_TOL = 1e-9
CLUSTER_TOL = 1e-9
OVERLAP_TOL = 1e-9
DEFECTIVE_COND = 1e8


@dataclass(frozen=True, eq=False)
class KrylovBasis:
    """Orthonormal Arnoldi basis; ``vectors[:, k]`` is ``v_k``."""

    label: str
    vectors: np.ndarray = field(repr=False)
    residual_norms: tuple[float, ...]
    hessenberg: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T


def arnoldi(L_adjoint: Superoperator | np.ndarray, seed, tol: float = ARNOLDI_TOL,
            label: str = "seed", max_dim: int | None = None) -> KrylovBasis:
    """Orthonormal basis of ``span{u, L^+ u, L^+^2 u, ...}``.

    Each step applies ``L^+`` to the last basis vector, removes its
    components along the basis (two Gram-Schmidt passes), and either
    normalizes the remainder or stops. The stop test is relative:
    ``||remainder|| <= tol * ||L^+ v_{k-1}||``.
    """
    M = L_adjoint.matrix if isinstance(L_adjoint, Superoperator) else np.asarray(L_adjoint)
    u = np.asarray(seed, dtype=complex)
    u = vectorize(u) if u.ndim == 2 else u.copy()
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValidationError("Arnoldi seed must be non-zero")
    n = u.size
    max_dim = n if max_dim is None else min(max_dim, n)
    V = np.zeros((n, max_dim), dtype=complex)
    H = np.zeros((max_dim + 1, max_dim), dtype=complex)
    V[:, 0] = u / norm
    residuals = []
    k = 1
    while k < max_dim:
        w = M @ V[:, k - 1]
        scale = np.linalg.norm(w)
        for _ in range(2):
            h = V[:, :k].conj().T @ w
            w = w - V[:, :k] @ h
            H[:k, k - 1] += h
        r = np.linalg.norm(w)
        residuals.append(float(r))
        H[k, k - 1] = r
        if r <= tol * max(scale, 1e-300):
            break
        V[:, k] = w / r
        k += 1
    else:
        # full space: record the closure residual of the last vector
        w = M @ V[:, k - 1]
        w = w - V[:, :k] @ (V[:, :k].conj().T @ w)
        residuals.append(float(np.linalg.norm(w)))
    return KrylovBasis(label, V[:, :k].copy(), tuple(residuals), H[: k + 1, :k].copy())


def occupation_seeds(config: SystemConfig) -> dict[str, np.ndarray]:
    """``{label: n_P}`` for every non-empty subset ``P`` of bath-coupled qubits."""
    return {subset_label(P, config.n_qubits): occupation_projector(P, config.n_qubits)
            for P in subsets(config.coupled)}


def krylov_bases(L: Superoperator, config: SystemConfig, tol: float = ARNOLDI_TOL) -> list[KrylovBasis]:
    Ld = adjoint(L) if L.tag == "lindbladian" else L
    return [arnoldi(Ld, n_P, tol, label) for label, n_P in occupation_seeds(config).items()]


def orth_extend(Q: np.ndarray, w: np.ndarray, tol: float = MEMBERSHIP_TOL):
    """Add ``w`` to orthonormal columns ``Q`` if it leaves their span."""
    nw = np.linalg.norm(w)
    if nw == 0:
        return Q, False
    for _ in range(2):
        w = w - Q @ (Q.conj().T @ w)
    r = np.linalg.norm(w)
    if r <= tol * nw:
        return Q, False
    return np.column_stack([Q, w / r]), True


@dataclass(frozen=True, eq=False)
class ObservableSpace:
    """Orthonormal basis of the sum of Krylov subspaces.

    ``budgets[label]`` is the number of leading Arnoldi vectors of that seed
    needed (given the seeds before it) to span the sum.
    """

    basis: np.ndarray = field(repr=False)
    budgets: dict[str, int]
    seed_dimensions: dict[str, int]

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def residual(self, op) -> float:
        """Relative norm of the component of ``op`` outside the space."""
        v = np.asarray(op, dtype=complex)
        v = vectorize(v) if v.ndim == 2 else v
        w = v - self.basis @ (self.basis.conj().T @ v)
        return float(np.linalg.norm(w) / np.linalg.norm(v))

    def contains(self, op, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.residual(op) <= tol

    def with_operators(self, ops) -> ObservableSpace:
        Q = self.basis
        for op in ops:
            v = np.asarray(op, dtype=complex)
            Q, _ = orth_extend(Q, vectorize(v) if v.ndim == 2 else v)
        return ObservableSpace(Q, dict(self.budgets), dict(self.seed_dimensions))


def assemble_observable_space(bases: list[KrylovBasis], tol: float = MEMBERSHIP_TOL) -> ObservableSpace:
    if not bases:
        raise ValidationError("need at least one Krylov basis")
    n = bases[0].vectors.shape[0]
    Q = np.zeros((n, 0), dtype=complex)
    budgets = {}
    for b in bases:
        used = 0
        for k in range(b.dimension):
            Q, added = orth_extend(Q, b.vectors[:, k], tol)
            if added:
                used = k + 1
        budgets[b.label] = used
    return ObservableSpace(Q, budgets, {b.label: b.dimension for b in bases})


def span_of(vectors, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    Q = np.zeros((len(np.asarray(vectors[0]).reshape(-1)), 0), dtype=complex)
    for v in vectors:
        v = np.asarray(v, dtype=complex)
        Q, _ = orth_extend(Q, vectorize(v) if v.ndim == 2 else v, tol)
    return Q


def krylov_power_vectors(L: Superoperator, seed, k_max: int) -> list[np.ndarray]:
    """``[u, L^+ u, ..., L^+^k_max u]`` (unnormalized)."""
    Ld = (adjoint(L) if L.tag == "lindbladian" else L).matrix
    u = np.asarray(seed, dtype=complex)
    out = [vectorize(u) if u.ndim == 2 else u]
    for _ in range(k_max):
        out.append(Ld @ out[-1])
    return out


# --------------------------------------------------------------------------
# density-matrix directions


def direction_operators(n_qubits: int = 2) -> dict[str, np.ndarray]:
    """Hermitian ``O`` with ``Tr[O rho]`` equal to one real coordinate of ``rho``.

    For two qubits the order is: populations, then ``alpha, beta`` parts,
    ``x, y`` parts and ``v, z`` parts (imaginary before real).
    """
    d = 2 ** n_qubits

    def pop(i):
        O = np.zeros((d, d), dtype=complex)
        O[i, i] = 1
        return O

    def part(i, j, which):
        O = np.zeros((d, d), dtype=complex)
        if which == "re":
            O[i, j] = O[j, i] = 0.5
        else:
            # Tr[O rho] = (rho_ij - rho_ji) / 2i
            O[j, i], O[i, j] = -0.5j, 0.5j
        return O

    if n_qubits == 2:
        out = {name: pop(ELEMENT_INDEX[name][0]) for name in ("r00", "r01", "r10", "r11")}
        for name in ("alpha", "beta", "x", "y", "v", "z"):
            i, j = ELEMENT_INDEX[name]
            out[f"Im {name}"] = part(i, j, "im")
            out[f"Re {name}"] = part(i, j, "re")
        return out
    out = {f"r{i}": pop(i) for i in range(d)}
    for i in range(d):
        for j in range(i + 1, d):
            out[f"Im rho[{i},{j}]"] = part(i, j, "im")
            out[f"Re rho[{i},{j}]"] = part(i, j, "re")
    return out


def direction_membership(space: ObservableSpace, n_qubits: int, trace_known: bool = True,
                         tol: float = MEMBERSHIP_TOL) -> dict[str, bool]:
    """Which coordinates of ``rho`` are fixed by projections on ``space``.

    With ``trace_known`` the identity (unit trace) is added to the space.
    """
    if trace_known:
        space = space.with_operators([np.eye(2 ** n_qubits)])
    return {name: space.contains(O, tol) for name, O in direction_operators(n_qubits).items()}


# --------------------------------------------------------------------------
# spectral analysis


@dataclass(frozen=True, eq=False)
class SpectralReport:
    eigenvalues: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    biorthogonality_residual: float
    eigvec_condition: float
    overlaps: dict[str, np.ndarray] = field(repr=False)
    clusters: list[list[int]]
    vandermonde_condition: float
    predicted_dimensions: dict[str, int]
    observable_dimension: int
    status: str

    @property
    def defective(self) -> bool:
        return self.status != "analyzed"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "biorthogonality_residual": self.biorthogonality_residual,
            "eigvec_condition": self.eigvec_condition,
            "vandermonde_condition": self.vandermonde_condition,
            "degeneracy_clusters": self.clusters,
            "overlaps_abs": {k: [float(abs(x)) for x in v] for k, v in self.overlaps.items()},
            "predicted_krylov_dimensions": self.predicted_dimensions,
            "observable_dimension": self.observable_dimension,
        }


def _clusters(lam: np.ndarray, tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    for i in np.argsort(lam.real, kind="stable"):
        for g in groups:
            if abs(lam[g[0]] - lam[i]) < tol:
                g.append(int(i))
                break
        else:
            groups.append([int(i)])
    return groups


def spectral_analysis(L: Superoperator, seeds: dict[str, np.ndarray] | None = None,
                      config: SystemConfig | None = None,
                      overlap_tol: float = OVERLAP_TOL, cluster_tol: float = CLUSTER_TOL) -> SpectralReport:
    """Eigen-decomposition view of Krylov dimensions for a diagonalizable ``L``.

    With distinct eigenvalues, ``K_P`` is spanned by the left eigen-operators
    whose right partner overlaps ``n_P``; a degenerate eigenvalue contributes
    at most one direction per seed, the overlap-weighted sum over its cluster.
    """
    if seeds is None:
        if config is None:
            raise ValidationError("give seeds or a config")
        seeds = occupation_seeds(config)
    lam, R = np.linalg.eig(L.matrix)
    R = R / np.linalg.norm(R, axis=0)
    cond = float(np.linalg.cond(R))
    n = lam.size
    if cond > DEFECTIVE_COND:
        return SpectralReport(lam, R, np.full_like(R, np.nan), np.nan, cond, {}, [], np.inf, {}, 0,
                              "near-defective spectrum: detected, not analyzed")
    S = np.linalg.inv(R).conj().T  # columns: left eigen-operators, <s_i, r_j> = delta_ij
    biorth = float(np.max(np.abs(S.conj().T @ R - np.eye(n))))
    vander = np.vander(lam, increasing=True).T
    with np.errstate(all="ignore"):
        vcond = float(np.linalg.cond(vander))
    groups = _clusters(lam, cluster_tol)
    overlaps, dims, reach = {}, {}, []
    for label, op in seeds.items():
        u = np.asarray(op, dtype=complex)
        u = vectorize(u) if u.ndim == 2 else u
        c = R.conj().T @ u
        overlaps[label] = c
        count = 0
        for g in groups:
            w = S[:, g] @ c[g]
            if np.linalg.norm(w) > overlap_tol * np.linalg.norm(u):
                count += 1
                reach.append(w)
        dims[label] = count
    obs = span_of(reach).shape[1] if reach else 0
    return SpectralReport(lam, R, S, biorth, cond, overlaps, [g for g in groups if len(g) > 1],
                          vcond, dims, obs, "analyzed")
