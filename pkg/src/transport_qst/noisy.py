"""Sampled-current measurement model and derivative estimation from noisy traces.

Each time point is averaged over ``samples_per_point`` shots with white
Gaussian noise of standard deviation ``current_std`` per shot, so the
recorded mean has standard deviation ``current_std / sqrt(samples)``.
Time derivatives come from local polynomial (Savitzky-Golay) fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_coeffs, savgol_filter

from .model import SystemConfig, ValidationError
from .transport import TransportRecord

GATE_SIGMAS = 5.0


@dataclass(frozen=True)
class NoiseModel:
    """White Gaussian shot noise on the lead currents and their product.

    ``correlation_std`` is the per-shot noise of ``I_LR``; by default it is
    ``current_std`` times the mean total lead rate, which gives it the
    units of a squared current.
    """

    current_std: float
    samples_per_point: int = 1
    seed: int = 0
    correlation_std: float | None = None

    def __post_init__(self):
        if not self.current_std >= 0:
            raise ValidationError("current_std must be non-negative")
        if int(self.samples_per_point) != self.samples_per_point or self.samples_per_point < 1:
            raise ValidationError("samples_per_point must be a positive integer")
        if self.correlation_std is not None and not self.correlation_std >= 0:
            raise ValidationError("correlation_std must be non-negative")

    @property
    def mean_std(self) -> float:
        return self.current_std / math.sqrt(self.samples_per_point)

    def correlation_mean_std(self, config: SystemConfig) -> float:
        per_shot = self.correlation_std
        if per_shot is None:
            per_shot = self.current_std * float(np.mean(config.gamma_total[list(config.coupled)]))
        return per_shot / math.sqrt(self.samples_per_point)


@dataclass(frozen=True)
class NoisyDerivativeEstimator:
    """Savitzky-Golay derivatives on a uniform grid.

    ``window`` is an odd number of points (at least 5) and ``poly_order``
    at most 4. Edges use a polynomial fit to the first/last window.
    """

    window: int = 11
    poly_order: int = 4

    def __post_init__(self):
        if self.window < 5 or self.window % 2 == 0:
            raise ValidationError("window must be an odd integer >= 5")
        if not 0 <= self.poly_order <= 4 or self.poly_order >= self.window:
            raise ValidationError("poly_order must be in [0, 4] and below the window")

    def derivatives(self, values, dt: float, max_order: int) -> np.ndarray:
        """Array ``(n, max_order + 1)``; column ``k`` estimates the ``k``-th derivative."""
        y = np.asarray(values, dtype=float)
        if max_order > self.poly_order:
            raise ValidationError(f"derivative order {max_order} exceeds poly_order {self.poly_order}")
        if len(y) < self.window:
            raise ValidationError(f"need at least {self.window} time points, got {len(y)}")
        return np.column_stack([savgol_filter(y, self.window, self.poly_order, deriv=k, delta=dt,
                                              mode="interp") for k in range(max_order + 1)])

    def variance_factors(self, dt: float, max_order: int) -> np.ndarray:
        """``Var(k-th derivative) / Var(sample)`` at interior points."""
        return np.array([np.sum(savgol_coeffs(self.window, self.poly_order, deriv=k, delta=dt) ** 2)
                         for k in range(max_order + 1)])


def uniform_step(times) -> float:
    t = np.asarray(times, dtype=float)
    if len(t) < 2:
        raise ValidationError("need at least two time points")
    d = np.diff(t)
    if not np.allclose(d, d[0], rtol=1e-9, atol=0.0) or d[0] <= 0:
        raise ValidationError("the noisy pipeline needs an increasing linear time grid")
    return float(d[0])


def draw_noise(seed: int, n_points: int, n_channels: int = 3) -> np.ndarray:
    """Standard normals of shape ``(n_points, n_channels)`` from a per-point split stream."""
    children = np.random.SeedSequence(seed).spawn(n_points)
    return np.array([np.random.default_rng(c).standard_normal(n_channels) for c in children])


@dataclass(frozen=True, eq=False)
class NoisyMeasurement:
    """Measured record plus the standard deviation of each derivative order."""

    record: TransportRecord
    current_std: np.ndarray
    correlation_std: float


def measure(exact: TransportRecord, config: SystemConfig, noise: NoiseModel,
            estimator: NoisyDerivativeEstimator | None = None, k_max: int = 3) -> NoisyMeasurement:
    """Emulate sampled current traces from exact data and estimate derivatives.

    The zeroth order keeps the raw averaged samples (unbiased); higher
    orders come from the polynomial fit. Activities and internal currents
    are not measured and are left as NaN.
    """
    estimator = estimator or NoisyDerivativeEstimator()
    dt = uniform_step(exact.times)
    n = len(exact.times)
    z = draw_noise(noise.seed, n)
    s = noise.mean_std
    s_lr = noise.correlation_mean_std(config)
    IL0 = exact.I_L[:, 0] + s * z[:, 0]
    IR0 = exact.I_R[:, 0] + s * z[:, 1]
    ILR0 = exact.I_LR[:, 0] + s_lr * z[:, 2]
    IL = estimator.derivatives(IL0, dt, k_max)
    IR = estimator.derivatives(IR0, dt, k_max)
    IL[:, 0], IR[:, 0] = IL0, IR0
    ILR = np.full((n, k_max + 1), np.nan)
    ILR[:, 0] = ILR0
    nan = np.full(n, np.nan)
    record = TransportRecord(exact.times.copy(), IL, IR, ILR, nan, nan.copy())
    factors = estimator.variance_factors(dt, k_max)
    factors[0] = 1.0
    return NoisyMeasurement(record, s * np.sqrt(factors), s_lr)


def consistency_gates(meas: NoisyMeasurement, config: SystemConfig,
                      sigmas: float = GATE_SIGMAS) -> dict[str, float]:
    """Tolerances for the vanishing-combination checks, scaled by the noise level.

    ``phi_j = I_j' / Gamma_j + I_j`` has variance ``s1^2 / Gamma_j^2 + s0^2``;
    sums and differences of the two leads double it. The real-part check
    adds the propagated variance of ``phi'``, ``phi`` and ``chi`` terms.
    """
    s = meas.current_std
    G = min(config.gamma_total[0], config.gamma_total[1])
    var_phi = 2 * ((s[1] / G) ** 2 + s[0] ** 2)
    var_dphi = 2 * ((s[2] / G) ** 2 + s[1] ** 2) if len(s) > 2 else math.inf
    g2 = max(config.g_res, config.g_off) ** 2
    var_re = var_dphi + (config.Gamma_tilde / 2) ** 2 * var_phi + (4 * g2) ** 2 * 2 * (s[0] / G) ** 2
    return {"tol_im": sigmas * math.sqrt(var_phi), "tol_re": sigmas * math.sqrt(var_re)}
