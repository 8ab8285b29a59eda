# fri_jsr/core_model.py
"""
On-grid FRI model: grid, sparse unknowns, pulse spectrum, Fourier measurement
basis, sampling patterns, datasets, noise injection and the evaluation metrics.

Grid and frequency indices are 1-based everywhere they are exposed (supports,
pattern indices, files); array positions are index - 1.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError

logger = logging.getLogger(__name__)

AMPLITUDE_MEAN = 10.0
AMPLITUDE_VARIANCE = 3.0
NMSE_FLOOR_DB = -200.0

# noise uses default_rng([seed, i, 1]); supports and amplitudes use default_rng([seed, i])
_NOISE_STREAM = 1


@dataclass(frozen=True)
class GridConfig:
    N: int
    L: int
    t_max: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"grid size N must be a positive integer, got {self.N!r}")
        if int(self.L) != self.L or not (1 <= self.L <= self.N):
            raise ValueError(f"sparsity L must satisfy 1 <= L <= N={self.N}, got {self.L!r}")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValueError(f"t_max must be positive and finite, got {self.t_max!r}")

    @property
    def delta(self) -> float:
        return self.t_max / self.N

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi / self.t_max

    def delays(self, indices: Iterable[int]) -> np.ndarray:
        """t_l = n_l * delta for 1-based grid indices n_l."""
        return np.asarray(list(indices), dtype=np.float64) * self.delta


@dataclass(frozen=True, eq=False)
class SparseVector:
    values: np.ndarray
    support: Tuple[int, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        if values.ndim != 1:
            raise DimensionError("sparse vector values must be one-dimensional")
        support = tuple(sorted(int(i) for i in self.support))
        N = values.shape[0]
        if len(set(support)) != len(support) or any(i < 1 or i > N for i in support):
            raise ValueError(f"support indices must be distinct and within 1..{N}: {support}")
        off = np.ones(N, dtype=bool)
        off[[i - 1 for i in support]] = False
        if np.any(values[off] != 0.0):
            raise ValueError("entries outside the support must be exactly zero")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "support", support)

    @classmethod
    def from_values(cls, values: Sequence[float], L: Optional[int] = None) -> "SparseVector":
        values = np.asarray(values, dtype=np.float64)
        support = tuple(int(i) + 1 for i in np.flatnonzero(values))
        if L is not None and len(support) > L:
            raise ValueError(f"{len(support)} nonzero entries exceed sparsity level L={L}")
        return cls(values, support)

    @classmethod
    def from_support(cls, N: int, support: Sequence[int], amplitudes: Sequence[float]) -> "SparseVector":
        support = [int(i) for i in support]
        amplitudes = np.asarray(amplitudes, dtype=np.float64)
        if amplitudes.shape != (len(support),):
            raise DimensionError("one amplitude per support index is required")
        values = np.zeros(N, dtype=np.float64)
        values[[i - 1 for i in support]] = amplitudes
        return cls(values, tuple(support))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def amplitudes(self) -> np.ndarray:
        return self.values[[i - 1 for i in self.support]]

    def delays(self, grid: GridConfig) -> np.ndarray:
        return grid.delays(self.support)


@dataclass(frozen=True, eq=False)
class PulseSpectrum:
    """Nonvanishing pulse Fourier samples H(k*omega0), k = 1..N."""
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128).copy()
        if samples.ndim != 1 or samples.size == 0:
            raise DimensionError("pulse spectrum must be a non-empty vector")
        if not np.all(np.isfinite(samples)) or np.min(np.abs(samples)) <= 0.0:
            raise ValueError("pulse spectrum must be finite with strictly positive magnitude")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def N(self) -> int:
        return self.samples.shape[0]


def make_pulse_spectrum(grid: GridConfig) -> PulseSpectrum:
    """Two Gaussian bumps on a 0.01 floor: entry n is 0.01 + e^{-0.04(n-3N/4)^2} + e^{-0.04(n-N/8)^2}."""
    N = grid.N
    n = np.arange(1, N + 1, dtype=np.float64)
    h = 0.01 + np.exp(-0.04 * (n - 3.0 * N / 4.0) ** 2) + np.exp(-0.04 * (n - N / 8.0) ** 2)
    return PulseSpectrum(h.astype(np.complex128))


@dataclass(frozen=True, eq=False)
class MeasurementBasis:
    """A[k, n] = exp(+j 2 pi k n / N) for k, n = 1..N."""
    entries: np.ndarray

    @classmethod
    def for_size(cls, N: int) -> "MeasurementBasis":
        k = np.arange(1, N + 1)
        # reduce k*n mod N before scaling so large products keep full phase accuracy
        phase = np.mod(np.outer(k, k), N).astype(np.float64) * (2.0 * math.pi / N)
        entries = np.exp(1j * phase)
        entries.setflags(write=False)
        return cls(entries)

    @property
    def N(self) -> int:
        return self.entries.shape[0]


_BASIS_CACHE = {}
_BASIS_LOCK = threading.Lock()


def measurement_basis(N: int) -> MeasurementBasis:
    with _BASIS_LOCK:
        basis = _BASIS_CACHE.get(N)
        if basis is None:
            basis = _BASIS_CACHE[N] = MeasurementBasis.for_size(N)
    return basis


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """Binary SoS coefficient vector c; indices are the 1-based set K = supp(c)."""
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask).astype(bool).copy()
        if mask.ndim != 1 or mask.size == 0:
            raise DimensionError("sampling mask must be a non-empty vector")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_indices(cls, N: int, indices: Iterable[int]) -> "SamplingPattern":
        mask = np.zeros(N, dtype=bool)
        for i in indices:
            i = int(i)
            if i < 1 or i > N:
                raise ValueError(f"pattern index {i} outside 1..{N}")
            mask[i - 1] = True
        return cls(mask)

    @classmethod
    def full(cls, N: int) -> "SamplingPattern":
        return cls(np.ones(N, dtype=bool))

    @classmethod
    def empty(cls, N: int) -> "SamplingPattern":
        return cls(np.zeros(N, dtype=bool))

    @property
    def N(self) -> int:
        return self.mask.shape[0]

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.flatnonzero(self.mask))

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def with_index(self, i: int) -> "SamplingPattern":
        return SamplingPattern.from_indices(self.N, set(self.indices) | {int(i)})

    def without_index(self, i: int) -> "SamplingPattern":
        return SamplingPattern.from_indices(self.N, set(self.indices) - {int(i)})

    def issubset(self, other: "SamplingPattern") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def __eq__(self, other):
        return isinstance(other, SamplingPattern) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.mask.tobytes())

    def __repr__(self):
        return f"SamplingPattern(N={self.N}, indices={list(self.indices)})"


def _vector_values(x) -> np.ndarray:
    return x.values if isinstance(x, SparseVector) else np.asarray(x)


def synthesize_fourier(x, pulse: PulseSpectrum, basis: MeasurementBasis) -> np.ndarray:
    """
    f = diag(h) A x. Accepts a SparseVector, a length-N vector, or a (Q, N)
    batch of row vectors (result is then (Q, N)).
    """
    values = _vector_values(x)
    N = basis.N
    if pulse.N != N or values.shape[-1] != N:
        raise DimensionError(f"dimension mismatch: x {values.shape}, h {pulse.N}, A {N}x{N}")
    if values.ndim == 1:
        return pulse.samples * (basis.entries @ values)
    return (values @ basis.entries.T) * pulse.samples


def subsample(f: np.ndarray, pattern: SamplingPattern) -> np.ndarray:
    """f_bar = diag(c) f; masked entries become zero (row-wise for batches)."""
    f = np.asarray(f)
    if f.shape[-1] != pattern.N:
        raise DimensionError(f"vector length {f.shape[-1]} does not match pattern length {pattern.N}")
    return np.where(pattern.mask, f, 0.0).astype(np.result_type(f, np.complex128))


def is_clean(snr_db) -> bool:
    if snr_db is None:
        return True
    if isinstance(snr_db, str):
        return snr_db.strip().lower() == "clean"
    return math.isinf(snr_db) and snr_db > 0


def noise_variance(energy, N: int, snr_db: float):
    """sigma^2 = ||f_bar||^2 / (N * 10^(snr/10)); N is the grid size even under subsampling."""
    return np.asarray(energy, dtype=np.float64) / (N * 10.0 ** (float(snr_db) / 10.0))


def _unit_complex_noise(rng: np.random.Generator, N: int) -> np.ndarray:
    """Circular complex Gaussian, unit variance per entry."""
    return (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / math.sqrt(2.0)


def add_noise(f_bar: np.ndarray, snr_db, pattern: SamplingPattern,
              rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """
    Add circular white Gaussian noise at the requested SNR to the retained
    entries of f_bar. Returns (noisy vector, sigma^2); "clean"/None/+inf
    returns a copy and sigma^2 = 0.
    """
    f_bar = np.asarray(f_bar, dtype=np.complex128)
    if f_bar.shape != (pattern.N,):
        raise DimensionError(f"vector length {f_bar.shape} does not match pattern length {pattern.N}")
    if is_clean(snr_db):
        return f_bar.copy(), 0.0
    if not math.isfinite(float(snr_db)):
        raise ValueError(f"snr_db must be finite or 'clean', got {snr_db!r}")
    energy = float(np.vdot(f_bar, f_bar).real)
    if energy == 0.0:
        raise ValueError("SNR is undefined for a zero-energy measurement vector")
    sigma2 = float(noise_variance(energy, pattern.N, snr_db))
    noise = math.sqrt(sigma2) * _unit_complex_noise(rng, pattern.N)
    return f_bar + np.where(pattern.mask, noise, 0.0), sigma2


@dataclass(frozen=True)
class SparsityModel:
    """
    Admissible supports. No blocks: L indices uniformly from 1..N. With blocks
    (lo, hi, count), `count` indices are drawn uniformly from lo..hi (1-based,
    inclusive) for every block.
    """
    blocks: Tuple[Tuple[int, int, int], ...] = ()

    @classmethod
    def uniform(cls) -> "SparsityModel":
        return cls(())

    @classmethod
    def structured(cls, blocks: Iterable[Sequence[int]]) -> "SparsityModel":
        return cls(tuple((int(lo), int(hi), int(c)) for lo, hi, c in blocks))

    @property
    def kind(self) -> str:
        return "structured" if self.blocks else "uniform"

    def validate(self, grid: GridConfig) -> None:
        if not self.blocks:
            return
        total = sum(c for _, _, c in self.blocks)
        if total != grid.L:
            raise ValueError(f"structured block counts sum to {total}, expected L={grid.L}")
        taken = np.zeros(grid.N + 1, dtype=bool)
        for lo, hi, count in self.blocks:
            if lo < 1 or hi > grid.N or lo > hi:
                raise ValueError(f"block {lo}..{hi} lies outside the grid 1..{grid.N}")
            if count < 0 or count > hi - lo + 1:
                raise ValueError(f"block {lo}..{hi} cannot hold {count} distinct indices")
            if np.any(taken[lo:hi + 1]):
                raise ValueError(f"block {lo}..{hi} overlaps another block")
            taken[lo:hi + 1] = True

    def draw_support(self, grid: GridConfig, rng: np.random.Generator) -> np.ndarray:
        if not self.blocks:
            return np.sort(rng.choice(grid.N, size=grid.L, replace=False) + 1)
        parts = [rng.choice(np.arange(lo, hi + 1), size=count, replace=False)
                 for lo, hi, count in self.blocks]
        return np.sort(np.concatenate(parts)).astype(int)


@dataclass(eq=False)
class Dataset:
    """
    Q on-grid examples sharing one grid and pulse. Row q of `amplitudes` is
    x_q; `index` holds each example's position in the generated sequence so
    splits stay traceable and noise stays tied to the example, not the split.
    Measurements are derived on demand, never stored.
    """
    grid: GridConfig
    pulse: PulseSpectrum
    amplitudes: np.ndarray
    seed: int
    snr_db: Optional[float] = None
    sparsity: SparsityModel = field(default_factory=SparsityModel.uniform)
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if self.amplitudes.ndim != 2 or self.amplitudes.shape[1] != self.grid.N:
            raise DimensionError(f"examples must be a (Q, {self.grid.N}) array")
        if self.pulse.N != self.grid.N:
            raise DimensionError("pulse spectrum length does not match the grid")
        if np.any(np.count_nonzero(self.amplitudes, axis=1) > self.grid.L):
            raise ValueError(f"an example has more than L={self.grid.L} nonzero entries")
        if self.index is None:
            self.index = np.arange(self.amplitudes.shape[0])
        self.index = np.asarray(self.index, dtype=np.int64)
        if is_clean(self.snr_db):
            self.snr_db = None
        self._noise = None
        self._noise_lock = threading.Lock()

    @property
    def Q(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def noise_spec(self) -> str:
        return "clean" if self.snr_db is None else f"{self.snr_db:g}"

    @property
    def examples(self) -> List[SparseVector]:
        return [self.vector(q) for q in range(self.Q)]

    def vector(self, q: int) -> SparseVector:
        return SparseVector.from_values(self.amplitudes[q], self.grid.L)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.grid, self.pulse, self.amplitudes[rows], self.seed,
                       self.snr_db, self.sparsity, self.index[rows])

    def with_noise(self, snr_db) -> "Dataset":
        return Dataset(self.grid, self.pulse, self.amplitudes, self.seed,
                       None if is_clean(snr_db) else float(snr_db), self.sparsity, self.index)

    def fourier(self) -> np.ndarray:
        return synthesize_fourier(self.amplitudes, self.pulse, measurement_basis(self.grid.N))

    def unit_noise(self) -> np.ndarray:
        """Per-example unit circular noise, drawn once from the example's own stream."""
        with self._noise_lock:
            if self._noise is None:
                N = self.grid.N
                self._noise = np.stack([
                    _unit_complex_noise(np.random.default_rng([self.seed, int(i), _NOISE_STREAM]), N)
                    for i in self.index
                ]) if self.Q else np.zeros((0, N), dtype=np.complex128)
            return self._noise

    def measurements(self, pattern: SamplingPattern) -> Tuple[np.ndarray, np.ndarray]:
        """
        Masked (and, unless clean, noisy) measurements for every example.
        Row q equals add_noise(subsample(f_q), snr, pattern, default_rng([seed, index_q, 1])).
        Returns (F_bar (Q, N), sigma^2 (Q,)).
        """
        if pattern.N != self.grid.N:
            raise DimensionError("pattern length does not match the grid")
        f_bar = subsample(self.fourier(), pattern)
        if self.snr_db is None:
            return f_bar, np.zeros(self.Q)
        energy = np.sum(np.abs(f_bar) ** 2, axis=1)
        if np.any(energy == 0.0):
            raise ValueError("SNR is undefined for a zero-energy measurement vector")
        sigma2 = noise_variance(energy, self.grid.N, self.snr_db)
        noise = np.sqrt(sigma2)[:, None] * self.unit_noise()
        return f_bar + np.where(pattern.mask, noise, 0.0), sigma2

    def full_pattern_noise_variance(self) -> np.ndarray:
        """sigma^2 per example referenced to the unmasked spectrum (ones when clean)."""
        if self.snr_db is None:
            return np.ones(self.Q)
        energy = np.sum(np.abs(self.fourier()) ** 2, axis=1)
        return noise_variance(energy, self.grid.N, self.snr_db)


def generate_dataset(grid: GridConfig, pulse: PulseSpectrum, q: int,
                     sparsity_model: Optional[SparsityModel] = None, seed: int = 0,
                     snr_db=None) -> Dataset:
    """
    Draw q examples. Example i uses its own generator default_rng([seed, i]):
    support from the sparsity model, amplitudes i.i.d. N(10, 3).
    """
    if int(q) != q or q < 1:
        raise ValueError(f"example count must be a positive integer, got {q!r}")
    model = sparsity_model or SparsityModel.uniform()
    model.validate(grid)
    std = math.sqrt(AMPLITUDE_VARIANCE)
    X = np.zeros((int(q), grid.N), dtype=np.float64)
    for i in range(int(q)):
        rng = np.random.default_rng([int(seed), i])
        support = model.draw_support(grid, rng)
        X[i, support - 1] = rng.normal(AMPLITUDE_MEAN, std, size=support.size)
    logger.debug("generated %d %s examples (N=%d, L=%d, seed=%d)", q, model.kind, grid.N, grid.L, seed)
    return Dataset(grid, pulse, X, int(seed), snr_db, model)


def split_dataset(dataset: Dataset, q_test: int) -> Tuple[Dataset, Dataset]:
    """First Q - q_test examples train, last q_test test; disjoint by construction."""
    if not (0 < q_test < dataset.Q):
        raise ValueError(f"q_test must lie in 1..{dataset.Q - 1}, got {q_test}")
    cut = dataset.Q - q_test
    return dataset.subset(np.arange(cut)), dataset.subset(np.arange(cut, dataset.Q))


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors)
    return np.stack([_vector_values(v) for v in vectors]) if len(vectors) else np.zeros((0, 0))


def nmse(truth, estimates) -> float:
    """10 log10( sum ||x_i - xhat_i||^2 / sum ||x_i||^2 ); -inf for perfect recovery."""
    X = np.real(_as_matrix(truth)).astype(np.float64)
    Xh = np.real(_as_matrix(estimates)).astype(np.float64)
    if X.shape != Xh.shape:
        raise DimensionError(f"truth {X.shape} and estimates {Xh.shape} differ in shape")
    denom = float(np.sum(X ** 2))
    if denom == 0.0:
        raise ValueError("NMSE is undefined for all-zero ground truth")
    num = float(np.sum((X - Xh) ** 2))
    return -math.inf if num == 0.0 else 10.0 * math.log10(num / denom)


def floor_db(value: float) -> float:
    return max(float(value), NMSE_FLOOR_DB)


def top_support(estimates: np.ndarray, L: int) -> np.ndarray:
    """Boolean (Q, N) mask of the L largest-magnitude entries per row; ties go to the smaller index."""
    E = np.abs(_as_matrix(estimates))
    order = np.argsort(-E, axis=1, kind="stable")[:, :L]
    mask = np.zeros(E.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def hit_rate(truth, estimates, L: int) -> float:
    """(1 / (L Q)) sum_i |supp(x_i) & top_L(xhat_i)|."""
    X = _as_matrix(truth)
    Xh = _as_matrix(estimates)
    if X.shape != Xh.shape:
        raise DimensionError(f"truth {X.shape} and estimates {Xh.shape} differ in shape")
    if L > X.shape[1]:
        raise ValueError(f"L={L} exceeds grid size {X.shape[1]}")
    if L < 1 or X.shape[0] == 0:
        raise ValueError(f"hit rate is undefined for L={L} over {X.shape[0]} examples")
    hits = np.sum((X != 0) & top_support(Xh, L))
    return float(hits) / (L * X.shape[0])
