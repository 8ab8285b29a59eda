# fri_jsr/analog_chain.py
"""
Sum-of-sincs (SoS) sampling front end: kernel, sub-Nyquist time sampler and
the Vandermonde inversion that recovers the retained Fourier values from the
time samples. Used to check that a chosen pattern is realizable in analog.

Convention: the analog Fourier transform is F(w) = int f(t) e^{-jwt} dt, which
is what convolution with g_c produces. On the grid this equals the discrete
model's spectrum with delays reflected n -> N - n (mod N); the two only
relabel delays and share every pattern-dependent property checked here.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import qr, solve_triangular

from .core_model import GridConfig, PulseSpectrum, SamplingPattern
from .errors import DimensionError, SingularSystemError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 0.5
SEED_TOLERANCE = 1e-12
POINTS_PER_PERIOD = 64


@dataclass(frozen=True)
class PulseShape:
    """Time-domain pulse h(t), identically zero outside [0, support]."""
    evaluator: Callable[[np.ndarray], np.ndarray]
    support: float

    def __post_init__(self):
        if not self.support > 0:
            raise ValueError(f"pulse support T_h must be positive, got {self.support!r}")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        inside = (t >= 0.0) & (t <= self.support)
        values = np.asarray(self.evaluator(np.where(inside, t, 0.0)), dtype=np.complex128)
        return np.where(inside, values, 0.0)


def fourier_series_pulse(pulse: PulseSpectrum, grid: GridConfig) -> PulseShape:
    """
    h(t) = (1/t_max) sum_k H_k e^{jk w0 t} on [0, t_max], so that
    int h(t) e^{-jk w0 t} dt = H_k for k = 1..N.
    """
    if pulse.N != grid.N:
        raise DimensionError("pulse spectrum length does not match the grid")
    k = np.arange(1, grid.N + 1, dtype=np.float64)
    H = pulse.samples
    w0 = grid.omega0

    def evaluate(t):
        t = np.asarray(t, dtype=np.float64)
        return (np.exp(1j * w0 * np.multiply.outer(t, k)) @ H) / grid.t_max

    return PulseShape(evaluate, grid.t_max)


@dataclass(frozen=True, eq=False)
class SoSKernel:
    """g_c(t) = sum_{k in K} c_k e^{jk w0 t} on [0, T_g], with T_g > T_h + t_max."""
    pattern: SamplingPattern
    omega0: float
    support: float
    t_max: float
    pulse_support: float

    def __post_init__(self):
        if not self.support > self.pulse_support + self.t_max:
            raise ValueError(
                f"kernel support T_g={self.support} must exceed T_h + t_max = "
                f"{self.pulse_support + self.t_max}")

    @property
    def window(self) -> Tuple[float, float]:
        return self.pulse_support + self.t_max, self.support

    def impulse_response(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        k = np.asarray(self.pattern.indices, dtype=np.float64)
        g = np.exp(1j * self.omega0 * np.multiply.outer(t, k)).sum(axis=-1)
        return np.where((t >= 0.0) & (t <= self.support), g, 0.0)


@dataclass(frozen=True, eq=False)
class TimeSampleSet:
    """Samples y(n T_s) for n = first_index .. first_index + n_count - 1."""
    T_s: float
    eps: Optional[float]
    first_index: int
    samples: np.ndarray
    omega0: float

    @property
    def n_count(self) -> int:
        return self.samples.shape[0]

    @property
    def t_start(self) -> float:
        return self.first_index * self.T_s

    @property
    def times(self) -> np.ndarray:
        return (self.first_index + np.arange(self.n_count)) * self.T_s


def sampling_interval(t_max: float, pattern: SamplingPattern, eps: float = DEFAULT_EPS) -> float:
    """T_s = t_max / (|K| + eps), 0 < eps < 1."""
    if not (0.0 < eps < 1.0):
        raise ValueError(f"guard fraction eps must lie strictly between 0 and 1, got {eps!r}")
    if pattern.count < 1:
        raise ValueError("sampling pattern must retain at least one Fourier index")
    return t_max / (pattern.count + eps)


def vandermonde_seeds(pattern: SamplingPattern, T_s: float, omega0: float) -> np.ndarray:
    k = np.asarray(pattern.indices, dtype=np.float64)
    return np.exp(1j * k * omega0 * T_s)


def check_seed_separation(pattern: SamplingPattern, T_s: float, omega0: float) -> float:
    """Smallest pairwise distance between seeds; raises when two coincide."""
    z = vandermonde_seeds(pattern, T_s, omega0)
    if z.size < 2:
        return math.inf
    dist = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(dist, np.inf)
    a, b = np.unravel_index(np.argmin(dist), dist.shape)
    if dist[a, b] < SEED_TOLERANCE:
        ka, kb = sorted((pattern.indices[a], pattern.indices[b]))
        raise SingularSystemError(
            f"Vandermonde seeds of Fourier indices {ka} and {kb} coincide for T_s={T_s!r}")
    return float(dist[a, b])


def build_vandermonde(pattern: SamplingPattern, T_s: float, n_count: int, omega0: float,
                      first_index: int = 1) -> np.ndarray:
    """(n, k) entry e^{jk w0 n T_s}; rows n = first_index.., columns k over sorted K."""
    if n_count < pattern.count:
        raise ValueError(f"n_count={n_count} is fewer than |K|={pattern.count} samples")
    check_seed_separation(pattern, T_s, omega0)
    n = first_index + np.arange(n_count, dtype=np.float64)
    k = np.asarray(pattern.indices, dtype=np.float64)
    return np.exp(1j * omega0 * T_s * np.outer(n, k))


def time_samples_from_fourier(F_masked: np.ndarray, pattern: SamplingPattern, T_s: float,
                              n_count: int, omega0: float, first_index: int = 1,
                              eps: Optional[float] = None) -> TimeSampleSet:
    """y(n T_s) = sum_{k in K} c_k F(k w0) e^{jk w0 n T_s}."""
    F_masked = np.asarray(F_masked, dtype=np.complex128)
    if F_masked.shape != (pattern.N,):
        raise DimensionError(f"Fourier vector length {F_masked.shape} does not match pattern length {pattern.N}")
    if np.any(F_masked[~pattern.mask] != 0):
        raise ValueError("Fourier vector has nonzero entries outside the sampling pattern")
    if n_count < pattern.count:
        raise ValueError(f"n_count={n_count} is fewer than |K|={pattern.count}; the inversion is under-determined")
    V = build_vandermonde(pattern, T_s, n_count, omega0, first_index)
    return TimeSampleSet(T_s, eps, int(first_index), V @ F_masked[pattern.mask], omega0)


def recover_fourier_from_time(y: TimeSampleSet, pattern: SamplingPattern) -> np.ndarray:
    """Least-squares left inverse of the Vandermonde system via QR; returns the masked length-N vector."""
    V = build_vandermonde(pattern, y.T_s, y.n_count, y.omega0, y.first_index)
    Qm, R = qr(V, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= SEED_TOLERANCE * max(diag.max(), 1.0) * V.shape[0]:
        raise SingularSystemError("Vandermonde system is rank deficient")
    coeffs = solve_triangular(R, Qm.conj().T @ y.samples)
    F = np.zeros(pattern.N, dtype=np.complex128)
    F[pattern.mask] = coeffs
    return F


def first_sample_index(T_s: float, window_start: float) -> int:
    """Smallest n with n T_s >= window_start."""
    n = math.ceil(window_start / T_s - 1e-12)
    return max(int(n), 1)


def make_sos_kernel(pattern: SamplingPattern, grid: GridConfig, pulse_support: float,
                    eps: float = DEFAULT_EPS, n_count: Optional[int] = None) -> Tuple[SoSKernel, float, int, int]:
    """
    Kernel sized for n_count samples (default |K|) plus one guard sample:
    T_g = T_h + t_max + (n_count + 1) T_s. Returns (kernel, T_s, n_count, first_index).
    """
    T_s = sampling_interval(grid.t_max, pattern, eps)
    n_count = pattern.count if n_count is None else int(n_count)
    if n_count < pattern.count:
        raise ValueError(f"n_count={n_count} is fewer than |K|={pattern.count}")
    start = pulse_support + grid.t_max
    T_g = start + (n_count + 1) * T_s
    kernel = SoSKernel(pattern, grid.omega0, T_g, grid.t_max, pulse_support)
    return kernel, T_s, n_count, first_sample_index(T_s, start)


@dataclass(frozen=True, eq=False)
class AnalogRoundTrip:
    recovered: np.ndarray
    time_samples: TimeSampleSet
    kernel: SoSKernel
    condition_number: float


def analog_round_trip(F_masked: np.ndarray, pattern: SamplingPattern, grid: GridConfig,
                      pulse_support: Optional[float] = None, eps: float = DEFAULT_EPS,
                      n_count: Optional[int] = None) -> AnalogRoundTrip:
    """Fourier values -> SoS time samples inside the kernel window -> recovered Fourier values."""
    pulse_support = grid.t_max if pulse_support is None else pulse_support
    kernel, T_s, n_count, first = make_sos_kernel(pattern, grid, pulse_support, eps, n_count)
    y = time_samples_from_fourier(F_masked, pattern, T_s, n_count, grid.omega0, first, eps)
    lo, hi = kernel.window
    if y.times[0] < lo - 1e-12 or y.times[-1] > hi + 1e-12:
        raise ValueError(f"sample times [{y.times[0]}, {y.times[-1]}] leave the window [{lo}, {hi}]")
    V = build_vandermonde(pattern, T_s, n_count, grid.omega0, first)
    cond = float(np.linalg.cond(V))
    logger.debug("analog round trip: |K|=%d T_s=%.6g first=%d cond=%.3g", pattern.count, T_s, first, cond)
    return AnalogRoundTrip(recover_fourier_from_time(y, pattern), y, kernel, cond)


def sos_closed_form(amplitudes: Sequence[float], delays: Sequence[float], pulse: PulseSpectrum,
                    kernel: SoSKernel, times) -> np.ndarray:
    """y(t) = sum_{k in K} c_k F(k w0) e^{jk w0 t}, F(k w0) = H_k sum_l a_l e^{-jk w0 t_l}."""
    a = np.asarray(amplitudes, dtype=np.float64)
    tl = np.asarray(delays, dtype=np.float64)
    k = np.asarray(kernel.pattern.indices, dtype=np.float64)
    H = pulse.samples[kernel.pattern.mask]
    F = H * (np.exp(-1j * kernel.omega0 * np.outer(k, tl)) @ a)
    return np.exp(1j * kernel.omega0 * np.multiply.outer(np.asarray(times, dtype=np.float64), k)) @ F


def default_grid_step(pulse_max_index: int, kernel: SoSKernel) -> float:
    """POINTS_PER_PERIOD points across the shortest oscillation period in play."""
    kmax = max(int(pulse_max_index), max(kernel.pattern.indices or (1,)))
    return kernel.t_max / kmax / POINTS_PER_PERIOD


def dense_grid_filter(amplitudes: Sequence[float], delays: Sequence[float], pulse: PulseShape,
                      kernel: SoSKernel, grid_step: float, times=None,
                      chunk: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """
    Numerically convolve f(t) = sum_l a_l h(t - t_l) with g_c(t) and return
    (times, y) on the window [T_h + t_max, T_g]. Each pulse's contribution is
    integrated by the trapezoidal rule over its own support, so pulse edges
    fall on quadrature nodes.
    """
    lo = pulse.support + kernel.t_max
    hi = kernel.support
    if hi <= lo:
        raise ValueError(f"empty observation window: T_g={hi} <= T_h + t_max = {lo}")
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step!r}")
    if times is None:
        n_out = max(int(math.ceil((hi - lo) / grid_step)), 1)
        times = np.linspace(lo, hi, n_out + 1)
    times = np.asarray(times, dtype=np.float64)
    n_u = max(int(math.ceil(pulse.support / grid_step)), 2)
    u = np.linspace(0.0, pulse.support, n_u + 1)
    h = pulse(u)
    y = np.zeros(times.shape, dtype=np.complex128)
    for a_l, t_l in zip(np.asarray(amplitudes, dtype=np.float64), np.asarray(delays, dtype=np.float64)):
        if a_l == 0.0:
            continue
        for start in range(0, times.size, chunk):
            t = times[start:start + chunk]
            g = kernel.impulse_response(t[:, None] - t_l - u[None, :])
            y[start:start + chunk] += a_l * trapezoid(h[None, :] * g, u, axis=1)
    return times, y


def kernel_description(kernel: SoSKernel, T_s: float, eps: float, n_count: int, first_index: int) -> dict:
    """Plain mapping for the KERNEL1 export (enough to program a kernel synthesizer)."""
    return {
        "schema": "KERNEL1",
        "indices": list(kernel.pattern.indices),
        "N": kernel.pattern.N,
        "omega0": float(kernel.omega0),
        "T_s": float(T_s),
        "eps": float(eps),
        "T_g": float(kernel.support),
        "T_h": float(kernel.pulse_support),
        "t_max": float(kernel.t_max),
        "n_count": int(n_count),
        "first_sample_index": int(first_index),
        "t_start": float(first_index * T_s),
    }
