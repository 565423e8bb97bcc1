"""
Smoothness of band-limited fields measured from coefficient decay.

A field's refined smoothness is read off dyadic shell sums
``S(R) = sum_{R < <xi> <= 2R} |u_hat(xi)|^2``.  The fitted model is
``|u_hat(xi)|^2 ~ C <xi>^(-2 s* - n) L_1(<xi>)^(2 r*)``, summed over the
actual lattice points of each shell, so that ``sum <xi>^(2t) |u_hat|^2``
converges for ``t < s*`` and, at ``t = s*``, exactly when ``r* < -1/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, signal
from scipy.special import comb, logsumexp

from .fredholm import fredholm_report, solve, truncate
from .pdo_calculus import PdoSystem
from .refined_spaces import (
    FourierField,
    ManifoldSpec,
    RefinedIndex,
    SpecMismatch,
    bracket,
    derivative,
    synthesize,
    weights,
)
from .slowly_varying import CONSTANT_ONE, EmbeddingVerdict, SlowlyVaryingFunction, embedding_criterion

MIN_SHELLS = 6


class InsufficientShells(ValueError):
    """Band too small for a dyadic shell fit."""


# -- cutoffs and localisation ------------------------------------------------


@dataclass(frozen=True, eq=False)
class CutoffFunction:
    """Real, nonnegative band-limited multiplier ``chi``."""

    field: FourierField

    def __post_init__(self):
        c = self.field.coeffs
        flipped = c[(slice(None, None, -1),) * c.ndim]
        if not np.allclose(c, np.conj(flipped), atol=1e-14):
            raise ValueError("cutoff coefficients must satisfy chi_hat(-xi) = conj(chi_hat(xi))")
        samples = synthesize(self.field, 4 * (2 * self.field.K + 1))
        if samples.real.min() < -1e-12:
            raise ValueError("cutoff must be nonnegative on the grid")

    @property
    def bandwidth(self) -> int:
        return self.field.K


def bump_cutoff(spec: ManifoldSpec, power: int = 3, center: Sequence[float] | None = None) -> CutoffFunction:
    """``prod_i ((1 + cos(x_i - c_i)) / 2)^power``, band ``power``, peak at ``c``."""
    if power < 0:
        raise ValueError("power must be nonnegative")
    k = np.arange(-power, power + 1)
    one_d = comb(2 * power, power + k, exact=False) / 4.0**power
    center = np.zeros(spec.n) if center is None else np.asarray(center, dtype=float)
    coeffs = None
    for axis in range(spec.n):
        factor = one_d * np.exp(-1j * k * center[axis])
        coeffs = factor if coeffs is None else np.multiply.outer(coeffs, factor)
    return CutoffFunction(FourierField(spec, power, coeffs.astype(complex)))


def flat_top_cutoff(spec: ManifoldSpec, power: int = 3, center: Sequence[float] | None = None) -> CutoffFunction:
    """``prod_i (1 - sin^(2 power)((x_i - c_i) / 2))``, band ``power``.

    Equal to one to order ``2 power`` at ``c`` and vanishing at ``c + pi``.
    Its coefficient moments of order ``2 .. 2 power - 1`` are zero, so
    multiplying a power-law field by it perturbs the coefficients only at
    relative order ``<xi>^(-2 power)``.
    """
    if power < 1:
        raise ValueError("power must be positive")
    k = np.arange(-power, power + 1)
    one_d = -((-1.0) ** k) * comb(2 * power, power + k, exact=False) / 4.0**power
    one_d[power] += 1.0
    center = np.zeros(spec.n) if center is None else np.asarray(center, dtype=float)
    coeffs = None
    for axis in range(spec.n):
        factor = one_d * np.exp(-1j * k * center[axis])
        coeffs = factor if coeffs is None else np.multiply.outer(coeffs, factor)
    return CutoffFunction(FourierField(spec, power, coeffs.astype(complex)))


def constant_cutoff(spec: ManifoldSpec) -> CutoffFunction:
    return CutoffFunction(FourierField(spec, 0, np.ones((1,) * spec.n, dtype=complex)))


def localize(u: FourierField, chi: CutoffFunction | FourierField) -> FourierField:
    """Coefficients of ``chi * u``: the discrete convolution, band ``K_u + K_chi``."""
    c = chi.field if isinstance(chi, CutoffFunction) else chi
    if c.spec != u.spec:
        raise SpecMismatch("cutoff and field live on different tori")
    conv = signal.convolve(u.coeffs, c.coeffs, mode="full", method="direct")
    return FourierField(u.spec, u.K + c.K, conv)


# -- smoothness fit ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmoothnessEstimate:
    """``s_star`` is ``inf`` for fields with no measurable tail.

    ``model`` is ``"power"`` when the log factor was not needed (``r_star = 0``),
    ``"power-log"`` when it was, ``"band-limited"`` for the ``inf`` marker.
    """

    s_star: float
    r_star: float
    residual: float
    radii: np.ndarray = field(repr=False)
    shell_sums: np.ndarray = field(repr=False)
    window: tuple[int, int] = (0, 0)
    model: str = "power"
    residual_threshold: float = 0.1

    @property
    def valid(self) -> bool:
        return self.residual <= self.residual_threshold

    def to_dict(self) -> dict:
        return {
            "s_star": "inf" if math.isinf(self.s_star) else self.s_star,
            "r_star": self.r_star,
            "residual": self.residual,
            "model": self.model,
            "window": list(self.window),
            "valid": self.valid,
        }

    def shell_table(self) -> list[tuple[float, float]]:
        return [(float(r), float(s)) for r, s in zip(self.radii, self.shell_sums)]


def dyadic_radii(K: int) -> np.ndarray:
    """Inner radii ``R = 2^j`` of the complete shells ``R < <xi> <= 2R <= K``."""
    if K < 2:
        return np.zeros(0)
    return 2.0 ** np.arange(0, int(math.floor(math.log2(K))))


def shell_sums(u: FourierField, radii: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    radii = dyadic_radii(u.K) if radii is None else np.asarray(radii, dtype=float)
    b = bracket(u.spec, u.K).ravel()
    mass = np.abs(u.coeffs.ravel()) ** 2
    sums = np.array([mass[(b > R) & (b <= 2 * R)].sum() for R in radii])
    return radii, sums


def _shell_logs(u: FourierField, radii: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    b = bracket(u.spec, u.K).ravel()
    out = []
    for R in radii:
        pts = b[(b > R) & (b <= 2 * R)]
        out.append((np.log(pts), np.log(np.log(math.e - 1.0 + pts))))
    return out


def _model(params, logs, n, with_log):
    s = params[1]
    r = params[2] if with_log else 0.0
    return np.array([params[0] + logsumexp((-2.0 * s - n) * lb + 2.0 * r * ll) for lb, ll in logs])


def smoothness_fit(
    u: FourierField,
    radii: np.ndarray | None = None,
    flat_tol: float = 1e-26,
    residual_threshold: float = 0.1,
    min_radius: float = 0.0,
) -> SmoothnessEstimate:
    """Boundary smoothness ``(s_star, r_star)`` from dyadic shell sums.

    The fit window drops the bottom two shells and every shell reaching past
    ``K/2``.  The log exponent is adopted only when it lowers the RMS residual
    at least tenfold relative to the pure power model.  ``min_radius`` drops
    further shells with inner radius below it (used after localisation, whose
    convolution mixes the lowest shells).
    """
    radii, sums = shell_sums(u, radii)
    if radii.size < MIN_SHELLS:
        raise InsufficientShells(f"band K = {u.K} gives {radii.size} complete dyadic shells, need {MIN_SHELLS}")
    lo = max(2, int(np.sum(radii < min_radius)))
    hi = int(np.sum(2.0 * radii <= u.K / 2.0))
    win = slice(lo, hi)
    if hi - lo < 3:
        raise InsufficientShells(f"band K = {u.K} leaves {max(hi - lo, 0)} shells in the fit window")
    top = float(sums.max()) if sums.size else 0.0
    if top == 0.0 or np.any(sums[win] <= flat_tol * top):
        return SmoothnessEstimate(math.inf, 0.0, 0.0, radii, sums, (lo, hi), "band-limited", residual_threshold)

    y = np.log(sums[win])
    logs = _shell_logs(u, radii[win])
    n = u.spec.n
    x = np.log(radii[win])
    slope = np.polyfit(x, y, 1)[0]
    s0 = -0.5 * slope

    def fit(with_log):
        p0 = [0.0, s0] + ([0.0] if with_log else [])
        base = _model(p0, logs, n, with_log)
        p0[0] = float(np.mean(y - base))
        res = optimize.least_squares(
            lambda p: _model(p, logs, n, with_log) - y, p0, method="lm", xtol=1e-14, ftol=1e-14
        )
        return res.x, float(np.sqrt(np.mean(res.fun**2)))

    p_pow, rms_pow = fit(False)
    model, s_star, r_star, rms = "power", float(p_pow[1]), 0.0, rms_pow
    if y.size >= 4:
        p_log, rms_log = fit(True)
        if rms_pow > 1e-6 and rms_log <= 0.1 * rms_pow:
            model, s_star, r_star, rms = "power-log", float(p_log[1]), float(p_log[2]), rms_log
    return SmoothnessEstimate(s_star, r_star, rms, radii, sums, (lo, hi), model, residual_threshold)


# -- lifting -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LiftingResult:
    estimate_f: list[SmoothnessEstimate]
    estimate_u: list[SmoothnessEstimate]
    gaps: tuple[float, ...]
    expected: tuple[float, ...]
    localized_gaps: tuple[float, ...] | None = None
    u: list[FourierField] = field(default_factory=list, repr=False)

    def max_error(self, localized: bool = False) -> float:
        g = self.localized_gaps if localized else self.gaps
        return max(abs(a - b) for a, b in zip(g, self.expected))

    def to_dict(self) -> dict:
        return {
            "s_star_f": [e.to_dict() for e in self.estimate_f],
            "s_star_u": [e.to_dict() for e in self.estimate_u],
            "gaps": list(self.gaps),
            "expected": list(self.expected),
            "localized_gaps": None if self.localized_gaps is None else list(self.localized_gaps),
        }


def _data_smoothness(estimates: Sequence[SmoothnessEstimate]) -> float:
    finite = [e.s_star for e in estimates if math.isfinite(e.s_star)]
    if not finite:
        raise ValueError("data has no measurable tail; lifting gap undefined")
    return min(finite)


def _restricted_solve(A: PdoSystem, f: Sequence[FourierField], K: int, s: float, phi) -> list[FourierField]:
    G = truncate(A, K, s, phi)
    rep = fredholm_report(G)
    return solve(G, rep, [fj.resized(K) for fj in f]).u


def lifting_experiment(
    A: PdoSystem,
    f: Sequence[FourierField],
    s: float = 0.0,
    phi: SlowlyVaryingFunction = CONSTANT_ONE,
    K: int | None = None,
    chi: CutoffFunction | None = None,
) -> LiftingResult:
    """Solve ``A u = f`` on band ``K`` and compare measured smoothness.

    The gap ``s_star(u_k) - min_j s_star(f_j)`` should equal the column order
    ``m_k``.  With ``chi`` the same gaps are measured on ``chi f`` and
    ``chi u``, skipping shells below ``2 B_chi`` that the convolution mixes.
    Raises :class:`~refined_scale.fredholm.Unsolvable` for data outside the
    range.
    """
    K = max(fj.K for fj in f) if K is None else K
    f = [fj.resized(K) for fj in f]
    u = _restricted_solve(A, f, K, s, phi)
    est_f = [smoothness_fit(fj) for fj in f]
    est_u = [smoothness_fit(uk) for uk in u]
    sf = _data_smoothness(est_f)
    gaps = tuple(e.s_star - sf for e in est_u)
    loc = None
    if chi is not None:
        skip = 2.0 * chi.bandwidth
        sf_loc = _data_smoothness([smoothness_fit(localize(fj, chi), min_radius=skip) for fj in f])
        loc = tuple(smoothness_fit(localize(uk, chi), min_radius=skip).s_star - sf_loc for uk in u)
    return LiftingResult(est_f, est_u, gaps, tuple(float(m) for m in A.column_orders), loc, u)


def power_data(spec: ManifoldSpec, K: int, a: float, r: float = 0.0, mean_zero: bool = False) -> FourierField:
    """``u_hat(xi) = <xi>^-a L_1(<xi>)^r``."""
    b = bracket(spec, K)
    c = b ** (-a) * np.log(math.e - 1.0 + b) ** r
    if mean_zero:
        c[(K,) * spec.n] = 0.0
    return FourierField(spec, K, c.astype(complex))


# -- continuity --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ContinuityResult:
    criterion_holds: bool
    membership_ok: bool
    increments_summable: bool
    sup_increments: np.ndarray = field(repr=False)
    decay_power: float = 0.0
    decay_log: float = 0.0
    membership: SmoothnessEstimate | None = None
    verdict: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict.startswith("continuous")

    def to_dict(self) -> dict:
        return {
            "criterion_holds": self.criterion_holds,
            "membership_ok": self.membership_ok,
            "increments_summable": self.increments_summable,
            "sup_increments": [float(v) for v in self.sup_increments],
            "decay_power": self.decay_power,
            "decay_log": self.decay_log,
            "membership": None if self.membership is None else self.membership.to_dict(),
            "verdict": self.verdict,
        }


def dyadic_sup_increments(u: FourierField, rho: int = 0, oversample: int = 2) -> np.ndarray:
    """``sup |S_{2R} - S_R|`` for the partial sums of ``d^rho u / dx_1^rho``
    over ``<xi> <= R``, ``R = 1, 2, 4, ...``, up to ``2R <= K``."""
    du = derivative(u, rho) if rho else u
    b = bracket(u.spec, u.K)
    N = oversample * (2 * u.K + 1)
    out = []
    for R in dyadic_radii(u.K):
        band = np.where((b > R) & (b <= 2 * R), du.coeffs, 0.0)
        out.append(np.abs(synthesize(FourierField(u.spec, u.K, band), N)).max())
    return np.asarray(out)


def continuity_check(
    u: FourierField,
    rho: int,
    phi: SlowlyVaryingFunction,
    tol: float = 0.05,
) -> ContinuityResult:
    """Numerical certificate for ``u in C^rho``.

    Certified iff the integral criterion for ``phi`` converges, ``u`` lies in
    ``H^{rho + n/2, phi}`` (fitted boundary of the weighted field) and the sup
    increments over dyadic bands are summable: a power decay, or a flat
    power with log decay faster than ``L_1^-1``.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    criterion = embedding_criterion(phi) is EmbeddingVerdict.CONVERGES
    incs = dyadic_sup_increments(u, rho)
    top = float(incs.max()) if incs.size else 0.0
    if top == 0.0 or incs[-1] <= 1e-13 * top:
        # trigonometric polynomial
        return ContinuityResult(criterion, True, True, incs, -math.inf, 0.0, None, "continuous (finite band)")

    idx = RefinedIndex(rho + u.spec.n / 2.0, phi)
    weighted = FourierField(u.spec, u.K, u.coeffs * weights(u.spec, u.K, idx))
    est = smoothness_fit(weighted)
    membership = est.s_star > tol or (abs(est.s_star) <= tol and est.r_star < -0.5)

    j = np.arange(incs.size)
    lo, hi = 2, incs.size - 1
    R = 2.0 ** j[lo:hi]
    X = np.column_stack([np.ones(R.size), np.log(R), np.log(np.log(math.e - 1.0 + R))])
    coef, *_ = np.linalg.lstsq(X, np.log(incs[lo:hi]), rcond=None)
    beta, gamma = float(coef[1]), float(coef[2])
    summable = beta < -tol or (abs(beta) <= tol and gamma < -1.0)

    if criterion and membership and summable:
        verdict = "continuous (certified numerically)"
    else:
        reasons = []
        if not criterion:
            reasons.append("integral criterion diverges")
        if not membership:
            reasons.append("membership fails")
        if not summable:
            reasons.append("increments not summable")
        verdict = "not certified: " + ", ".join(reasons)
    return ContinuityResult(criterion, membership, summable, incs, beta, gamma, est, verdict)
