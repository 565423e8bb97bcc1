"""
Fredholm analysis of finite sections between refined spaces.

The operator ``A : prod_k H^{s+m_k,phi} -> (H^{s,phi})^p`` is represented on
band ``K`` by ``G = W_t M W_s^{-1}`` where ``M`` is the ``L_2`` Galerkin matrix
and ``W_t``, ``W_s`` are the diagonal Fourier weights of target and source.
Unit vectors of ``G``'s coordinates are unit vectors of the refined norms.

Finite sections of operators with nonzero index are square and therefore
have index zero; the mismatch shows up as null vectors sitting at the band
edge.  Numerical kernel and cokernel vectors are split into a smooth part
(mass concentrated on ``|xi|_inf <= K/2``) and an edge part; only the smooth
part is reported as ``N`` or ``N+``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .pdo_calculus import PdoSystem, flatten, galerkin_matrix, mode_blocks, unflatten
from .refined_spaces import FourierField, RefinedIndex, lattice, weights
from .slowly_varying import CONSTANT_ONE, SlowlyVaryingFunction

GAP_THRESHOLD = 1e3


class AmbiguousRank(RuntimeError):
    """The singular values show no clear gap at the rank threshold."""


class Unsolvable(ValueError):
    """Data not orthogonal to the cokernel."""

    def __init__(self, defects: np.ndarray):
        self.defects = np.asarray(defects)
        vals = ", ".join(f"{abs(d):.6g}" for d in self.defects[:6])
        super().__init__(f"data has nonzero pairings with the cokernel: |defect| = [{vals}]")


class IllConditionedDecomposition(RuntimeError):
    """Kernel and its complement are numerically parallel."""


@dataclass(frozen=True, eq=False)
class GalerkinOperator:
    system: PdoSystem
    K: int
    target: RefinedIndex
    sources: tuple[RefinedIndex, ...]
    l2_matrix: sp.csr_matrix = field(repr=False)
    w_target: np.ndarray = field(repr=False)
    w_source: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.l2_matrix.shape[0]

    @property
    def modes_per_component(self) -> int:
        return (2 * self.K + 1) ** self.system.n

    @cached_property
    def weighted(self) -> sp.csr_matrix:
        return (sp.diags(self.w_target) @ self.l2_matrix @ sp.diags(1.0 / self.w_source)).tocsr()

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``G``."""
        return self.weighted.toarray()

    @cached_property
    def mode_matrices(self) -> np.ndarray:
        """Per-mode ``p x p`` blocks of ``G`` (constant coefficients only)."""
        N, p = self.modes_per_component, self.system.p
        B = mode_blocks(self.system, self.K)
        wt = self.w_target[:N]
        ws = self.w_source.reshape(p, N).T
        return wt[:, None, None] * B / ws[:, None, :]

    def high_mode_mask(self) -> np.ndarray:
        """True on entries with ``|xi|_inf > K/2``, stacked over components."""
        xs = lattice(self.system.spec, self.K)
        high = np.max(np.abs(np.stack(xs)), axis=0).ravel() > self.K / 2.0
        return np.tile(high, self.system.p)


def truncate(A: PdoSystem, K: int, s: float, phi: SlowlyVaryingFunction = CONSTANT_ONE) -> GalerkinOperator:
    """Weighted finite section of ``A`` between ``prod H^{s+m_k,phi}`` and ``(H^{s,phi})^p``."""
    spec = A.spec
    target = RefinedIndex(float(s), phi)
    sources = tuple(RefinedIndex(float(s) + m, phi) for m in A.column_orders)
    wt = np.tile(weights(spec, K, target).ravel(), A.p)
    ws = np.concatenate([weights(spec, K, idx).ravel() for idx in sources])
    return GalerkinOperator(A, K, target, sources, galerkin_matrix(A, K), wt, ws)


def _orthonormal(X: np.ndarray) -> np.ndarray:
    if X.shape[1] == 0:
        return X
    q, _ = np.linalg.qr(X)
    return q


def _split_smooth(Q: np.ndarray, high: np.ndarray, threshold: float):
    """Rotate an orthonormal basis so that its members have extremal mass on
    high modes; return (smooth basis, edge basis, smooth high-mode fractions)."""
    if Q.shape[1] == 0:
        return Q, Q, np.zeros(0)
    Qh = Q[high]
    evals, evecs = np.linalg.eigh(Qh.conj().T @ Qh)
    keep = evals <= threshold
    return Q @ evecs[:, keep], Q @ evecs[:, ~keep], np.clip(evals[keep], 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class FredholmReport:
    """Numerical kernel, cokernel and index of a finite section.

    Bases are orthonormal in ``L_2`` coefficient coordinates (columns of
    stacked component vectors).  ``index`` is ``None`` when the rank is
    ambiguous.
    """

    K: int
    target: RefinedIndex
    sources: tuple[RefinedIndex, ...]
    dim_kernel: int
    dim_cokernel: int
    index: int | None
    sigma_gap: float
    ambiguous: bool
    rank: int
    rank_tol: float
    singular_values: np.ndarray = field(repr=False)
    kernel_basis: np.ndarray = field(repr=False)
    cokernel_basis: np.ndarray = field(repr=False)
    numerical_cokernel: np.ndarray = field(repr=False)
    edge_kernel_dim: int = 0
    edge_cokernel_dim: int = 0
    kernel_high_mass: float = 0.0
    cokernel_high_mass: float = 0.0
    svd: tuple = field(default=(), repr=False)
    operator: GalerkinOperator | None = field(default=None, repr=False)

    @property
    def spec(self):
        return self.operator.system.spec

    def kernel_fields(self) -> list[list[FourierField]]:
        return [unflatten(v, self.spec, self.K, self.operator.system.p) for v in self.kernel_basis.T]

    def cokernel_fields(self) -> list[list[FourierField]]:
        return [unflatten(v, self.spec, self.K, self.operator.system.p) for v in self.cokernel_basis.T]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "s": self.target.s,
            "phi": self.target.phi.to_list(),
            "dimN": self.dim_kernel,
            "dimN_plus": self.dim_cokernel,
            "index": self.index,
            "sigma_gap": _json_float(self.sigma_gap),
            "ambiguous_rank": self.ambiguous,
            "rank": self.rank,
            "edge_kernel_dim": self.edge_kernel_dim,
            "edge_cokernel_dim": self.edge_cokernel_dim,
            "kernel_high_mass": self.kernel_high_mass,
            "cokernel_high_mass": self.cokernel_high_mass,
            "sigma_max": float(self.singular_values[0]) if self.singular_values.size else 0.0,
            "sigma_min": float(self.singular_values[-1]) if self.singular_values.size else 0.0,
        }


def _json_float(x: float):
    if math.isinf(x):
        return "inf"
    return float(x)


def _svd(a: np.ndarray):
    try:
        return np.linalg.svd(a)
    except np.linalg.LinAlgError:
        # divide-and-conquer occasionally fails to converge; QR iteration is slower but robust
        return sla.svd(a, lapack_driver="gesvd")


def _gap(s: np.ndarray, zero: np.ndarray) -> float:
    retained, discarded = s[~zero], s[zero]
    if retained.size and discarded.size and discarded.max() > 0.0:
        return float(retained.min() / discarded.max())
    return math.inf


def fredholm_report(
    G: GalerkinOperator,
    rank_tol: float = 1e-8,
    edge_threshold: float = 0.5,
) -> FredholmReport:
    """SVD-based kernel, cokernel and index of ``G``.

    Singular values below ``rank_tol * max(1, sigma_max)`` count as zero.  The
    gap certificate is the smallest retained over the largest discarded
    singular value; below ``1e3`` the report is flagged ambiguous.  Constant
    coefficient systems are decomposed mode by mode, where ``G`` is block
    diagonal.
    """
    if not 0.0 < rank_tol < 1.0:
        raise ValueError("rank_tol must lie in (0, 1)")
    if G.system.is_constant_coefficient():
        return _report_modes(G, rank_tol, edge_threshold)
    U, s, Vh = _svd(G.matrix)
    smax = float(s[0]) if s.size else 0.0
    zero = s <= rank_tol * max(1.0, smax)
    rank = int(np.sum(~zero))
    ker_l2 = _orthonormal(Vh[rank:].conj().T / G.w_source[:, None])
    coker_l2 = _orthonormal(U[:, rank:] * G.w_target[:, None])
    svd = ("dense", U[:, :rank], s[:rank], Vh[:rank].conj().T)
    return _assemble(G, rank_tol, edge_threshold, s, _gap(s, zero), rank, ker_l2, coker_l2, svd)


def _report_modes(G: GalerkinOperator, rank_tol: float, edge_threshold: float) -> FredholmReport:
    N, p = G.modes_per_component, G.system.p
    U, sv, Vh = np.linalg.svd(G.mode_matrices)
    smax = float(sv.max()) if sv.size else 0.0
    zero = sv <= rank_tol * max(1.0, smax)
    ws = G.w_source.reshape(p, N).T
    ker_cols, coker_cols = [], []
    for m in np.nonzero(zero.any(axis=1))[0]:
        js = np.nonzero(zero[m])[0]
        # kernel directions of the block in L_2 coordinates, orthonormal within the mode
        kq = _orthonormal((Vh[m].conj().T / ws[m][:, None])[:, js])
        for col_k, col_c in zip(kq.T, U[m][:, js].T):
            vk = np.zeros(p * N, dtype=complex)
            vk[np.arange(p) * N + m] = col_k
            vc = np.zeros(p * N, dtype=complex)
            vc[np.arange(p) * N + m] = col_c
            ker_cols.append(vk)
            coker_cols.append(vc)
    empty = np.zeros((p * N, 0), dtype=complex)
    ker_l2 = np.column_stack(ker_cols) if ker_cols else empty
    coker_l2 = np.column_stack(coker_cols) if coker_cols else empty
    s = np.sort(sv.ravel())[::-1]
    gap = _gap(sv.ravel(), zero.ravel())
    return _assemble(G, rank_tol, edge_threshold, s, gap, int(np.sum(~zero)), ker_l2, coker_l2, ("modes", U, sv, Vh, zero))


def _assemble(G, rank_tol, edge_threshold, s, gap, rank, ker_l2, coker_l2, svd) -> FredholmReport:
    ambiguous = gap < GAP_THRESHOLD
    high = G.high_mode_mask()
    ker, ker_edge, ker_mass = _split_smooth(ker_l2, high, edge_threshold)
    coker, coker_edge, coker_mass = _split_smooth(coker_l2, high, edge_threshold)
    dimN, dimNp = ker.shape[1], coker.shape[1]
    return FredholmReport(
        K=G.K,
        target=G.target,
        sources=G.sources,
        dim_kernel=dimN,
        dim_cokernel=dimNp,
        index=None if ambiguous else dimN - dimNp,
        sigma_gap=gap,
        ambiguous=ambiguous,
        rank=rank,
        rank_tol=rank_tol,
        singular_values=s,
        kernel_basis=ker,
        cokernel_basis=coker,
        numerical_cokernel=coker_l2,
        edge_kernel_dim=ker_edge.shape[1],
        edge_cokernel_dim=coker_edge.shape[1],
        kernel_high_mass=float(ker_mass.max()) if ker_mass.size else 0.0,
        cokernel_high_mass=float(coker_mass.max()) if coker_mass.size else 0.0,
        svd=svd,
        operator=G,
    )


def operator_norm(G: GalerkinOperator) -> float:
    """Spectral norm of ``G``, the bound of the refined-space operator on band ``K``."""
    if G.system.is_constant_coefficient():
        return float(np.linalg.norm(G.mode_matrices, ord=2, axis=(1, 2)).max())
    if G.size <= 3000:
        return float(np.linalg.norm(G.matrix, 2))
    return float(spla.svds(G.weighted, k=1, return_singular_vectors=False)[0])


# -- index across parameters -------------------------------------------------


@dataclass(frozen=True)
class IndexTable:
    rows: tuple[dict, ...]
    consistent: bool
    flags: tuple[str, ...]

    @property
    def indices(self) -> list[int | None]:
        return [r["index"] for r in self.rows]


def index_invariance_experiment(
    A: PdoSystem,
    idx_list: Sequence[RefinedIndex | tuple],
    K_list: Sequence[int],
    rank_tol: float = 1e-8,
) -> IndexTable:
    """Index for every ``(s, phi)`` and ``K``; flags disagreement, ambiguous
    ranks and kernel/cokernel dimensions that drift with ``K``."""
    if not idx_list or not K_list:
        raise ValueError("parameter lists must be nonempty")
    rows = []
    flags = []
    for idx in idx_list:
        if not isinstance(idx, RefinedIndex):
            idx = RefinedIndex(float(idx[0]), idx[1])
        dims = set()
        for K in K_list:
            rep = fredholm_report(truncate(A, K, idx.s, idx.phi), rank_tol)
            rows.append(rep.to_dict())
            dims.add((rep.dim_kernel, rep.dim_cokernel))
            if rep.ambiguous:
                flags.append(f"ambiguous rank at s={idx.s:g}, phi={idx.phi}, K={K}")
        if len(dims) > 1:
            flags.append(f"dimensions drift with K at s={idx.s:g}, phi={idx.phi}: {sorted(dims)}")
    if len({r["index"] for r in rows}) > 1:
        flags.append("index disagreement")
    return IndexTable(tuple(rows), not flags, tuple(flags))


# -- range, projectors, restricted solve -------------------------------------


@dataclass(frozen=True)
class SolvabilityResult:
    solvable: bool
    defects: np.ndarray
    scale: float


def _gamma_factor(rep: FredholmReport) -> float:
    return (2.0 * math.pi) ** rep.operator.system.n


def _data_vector(f: Sequence[FourierField], rep: FredholmReport) -> np.ndarray:
    A = rep.operator.system
    if len(f) != A.p:
        raise ValueError(f"expected {A.p} data components, got {len(f)}")
    if any(fj.K > rep.K and np.any(fj.coeffs != fj.resized(rep.K).resized(fj.K).coeffs) for fj in f):
        raise ValueError(f"data exceeds the band K = {rep.K}")
    return flatten(f, rep.K)


def solvability_test(f: Sequence[FourierField], rep: FredholmReport, tol: float = 1e-8) -> SolvabilityResult:
    """Gamma-pairings ``sum_j (f_j, w_j)_Gamma`` against each cokernel vector.

    Solvable iff every ``|pairing| <= tol * ||f||_Gamma * ||w||_Gamma``.
    """
    F = _data_vector(f, rep)
    gam = _gamma_factor(rep)
    defects = gam * (rep.cokernel_basis.conj().T @ F)
    # cokernel vectors have unit coefficient norm: ||w||_Gamma = gam**0.5
    scale = gam * float(np.linalg.norm(F))
    solvable = bool(np.all(np.abs(defects) <= tol * scale)) if defects.size else True
    return SolvabilityResult(solvable, defects, scale)


@dataclass(frozen=True, eq=False)
class ProjectorPair:
    """``P`` on the source and ``P_plus`` on the target, in ``L_2`` coefficient
    coordinates.  ``P`` removes the kernel along the Gamma-orthogonal
    decomposition; ``P_plus`` projects onto the numerical range along the
    cokernel."""

    P: np.ndarray
    P_plus: np.ndarray
    min_angle: float


def projectors(G: GalerkinOperator, rep: FredholmReport, min_angle: float = 1e-6) -> ProjectorPair:
    if rep.ambiguous:
        raise AmbiguousRank(f"sigma gap {rep.sigma_gap:.3g} below {GAP_THRESHOLD:g}")
    n = G.size
    Nk = rep.kernel_basis
    Wc = rep.numerical_cokernel
    P = np.eye(n, dtype=complex) - Nk @ Nk.conj().T
    P_plus = np.eye(n, dtype=complex) - Wc @ Wc.conj().T
    angle = math.pi / 2.0
    if Nk.shape[1]:
        # angle between N and range(P) measured in the weighted source geometry
        Qn = _orthonormal(G.w_source[:, None] * Nk)
        comp = sla.null_space(Nk.conj().T)
        Qr = _orthonormal(G.w_source[:, None] * comp)
        cos = min(1.0, float(np.linalg.norm(Qn.conj().T @ Qr, 2)))
        angle = math.acos(cos)
        if math.sin(angle) < min_angle:
            raise IllConditionedDecomposition(f"kernel/complement angle {angle:.3g}")
    return ProjectorPair(P, P_plus, angle)


@dataclass(frozen=True, eq=False)
class SolveResult:
    u: list[FourierField]
    vector: np.ndarray = field(repr=False)
    residual: float
    condition: float
    projected_data: np.ndarray = field(repr=False)


def _pinv_apply(rep: FredholmReport, y: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of ``G`` (zero singular values dropped) applied to ``y``."""
    if rep.svd[0] == "dense":
        _, Ur, sr, Vr = rep.svd
        return Vr @ ((Ur.conj().T @ y) / sr)
    _, U, sv, Vh, zero = rep.svd
    N, p = sv.shape
    ym = y.reshape(p, N).T
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, sv))
    v = np.einsum("mji,mj->mi", Vh.conj(), inv * np.einsum("mij,mi->mj", U.conj(), ym))
    return v.T.ravel()


def solve(
    G: GalerkinOperator,
    rep: FredholmReport,
    f: Sequence[FourierField],
    tol: float = 1e-10,
    solvability_tol: float = 1e-8,
) -> SolveResult:
    """Restricted inverse: the unique ``u`` with ``P u = u`` and ``G u = P_plus f``.

    Raises :class:`Unsolvable` when the data pairs nontrivially with the
    cokernel.  ``residual`` is ``||G u - P_plus f||`` in the target refined norm.
    """
    if rep.ambiguous:
        raise AmbiguousRank(f"sigma gap {rep.sigma_gap:.3g} below {GAP_THRESHOLD:g}")
    test = solvability_test(f, rep, solvability_tol)
    if not test.solvable:
        raise Unsolvable(test.defects)
    F = _data_vector(f, rep)
    Wc = rep.numerical_cokernel
    Fp = F - Wc @ (Wc.conj().T @ F)
    u = _pinv_apply(rep, G.w_target * Fp) / G.w_source
    Nk = rep.kernel_basis
    u = u - Nk @ (Nk.conj().T @ u)
    residual = float(np.linalg.norm(G.w_target * (G.l2_matrix @ u - Fp)))
    s = rep.singular_values
    cond = float(s[0] / s[rep.rank - 1]) if rep.rank else math.inf
    A = G.system
    return SolveResult(unflatten(u, A.spec, G.K, A.p), u, residual, cond, Fp)


# -- a priori estimate -------------------------------------------------------


def apriori_constant(
    A: PdoSystem,
    s: float,
    phi: SlowlyVaryingFunction,
    sigma: float,
    K: int,
) -> float:
    """Best constant ``c`` on band ``K`` in

        sum_k ||u_k||^2_{s+m_k,phi} <= c^2 (sum_j ||(Au)_j||^2_{s,phi} + sum_k ||u_k||^2_{s-sigma}),

    the largest generalized eigenvalue of the pencil of the two forms.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    G = truncate(A, K, s, phi)
    spec, N, p = A.spec, G.modes_per_component, A.p
    w_low = weights(spec, K, RefinedIndex(s - sigma)).ravel()
    ws2 = G.w_source**2
    if A.is_constant_coefficient():
        B = mode_blocks(A, K)
        wt2 = G.w_target[:N] ** 2
        D = wt2[:, None, None] * np.einsum("mki,mkj->mij", B.conj(), B)
        D = D + (w_low**2)[:, None, None] * np.eye(p)
        scale = 1.0 / np.sqrt(ws2.reshape(p, N).T)
        C = scale[:, :, None] * D * scale[:, None, :]
        lam_min = np.linalg.eigvalsh(C)[:, 0]
        return float(np.sqrt(1.0 / lam_min.min()))
    M = G.l2_matrix
    D = (M.conj().T @ sp.diags(G.w_target**2) @ M + sp.diags(np.tile(w_low**2, p))).tocsc()
    scale = sp.diags(1.0 / np.sqrt(ws2))
    C = (scale @ D @ scale).tocsc()
    if C.shape[0] <= 3000:
        lam_min = sla.eigh(C.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]
    else:
        lam_min = spla.eigsh(C, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    return float(np.sqrt(1.0 / lam_min))


@dataclass(frozen=True)
class AprioriReport:
    sigma: float
    K: tuple[int, ...]
    c_quad: tuple[float, ...]
    growth: tuple[float, ...]
    verdict: str


def apriori_report(
    A: PdoSystem,
    s: float,
    phi: SlowlyVaryingFunction,
    sigma: float,
    K_list: Sequence[int],
) -> AprioriReport:
    """``c_quad`` along ``K_list``; ``bounded`` when every step changes it by
    at most 10%, ``growing`` when every step at least doubles it."""
    c = [apriori_constant(A, s, phi, sigma, K) for K in K_list]
    growth = tuple(b / a for a, b in zip(c, c[1:]))
    if growth and all(abs(g - 1.0) <= 0.1 for g in growth):
        verdict = "bounded"
    elif growth and all(g >= 2.0 for g in growth):
        verdict = "growing"
    else:
        verdict = "inconclusive"
    return AprioriReport(float(sigma), tuple(K_list), tuple(c), growth, verdict)
