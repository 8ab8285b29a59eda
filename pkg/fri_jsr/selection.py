# fri_jsr/selection.py
"""
Set-function costs over sampling patterns and the greedy drivers that
minimize them.

Two cost families:
  - log-det CRLB: mean over examples of -log det FIM_q, with the Fisher
    information taken in the (amplitude, delay) parameters of each example;
  - empirical: mean squared reconstruction error of a recovery routine.

Greedy forward adds the best remaining index per step, greedy backward
removes the least useful one. Candidate costs within a step are evaluated
through parallel_map and reduced in index order, ties going to the
smallest index.
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core_model import Dataset, GridConfig, PulseSpectrum, SamplingPattern, SparseVector
from .errors import DimensionError
from .parallel import parallel_map
from .sparse_recovery import RecoveryConfig, fista_recover

logger = logging.getLogger(__name__)

CRLB = "crlb"
EMPIRICAL = "empirical"

# examples per batched Fisher-information evaluation
_FIM_CHUNK = 4096


def fri_fourier(amplitudes, delays, pulse: PulseSpectrum, indices: Sequence[int], omega0: float) -> np.ndarray:
    """F(k w0) = H_k sum_l a_l e^{j k w0 t_l} for the listed 1-based k."""
    k = np.asarray(indices, dtype=np.float64)
    a = np.asarray(amplitudes, dtype=np.float64)
    t = np.asarray(delays, dtype=np.float64)
    H = pulse.samples[np.asarray(indices, dtype=int) - 1]
    return H * (np.exp(1j * omega0 * np.outer(k, t)) @ a)


def fri_jacobian(amplitudes, delays, pulse: PulseSpectrum, indices: Sequence[int], omega0: float) -> np.ndarray:
    """
    d F(k w0) / d(a, t) over the retained rows. Leading axes of amplitudes and
    delays are batch axes: (..., L) inputs give a (..., |K|, 2L) Jacobian.
    """
    a = np.asarray(amplitudes, dtype=np.float64)
    t = np.asarray(delays, dtype=np.float64)
    if a.shape != t.shape:
        raise DimensionError(f"amplitudes {a.shape} and delays {t.shape} differ in shape")
    k = np.asarray(indices, dtype=np.float64)
    H = pulse.samples[np.asarray(indices, dtype=int) - 1]
    E = H[:, None] * np.exp(1j * omega0 * k[:, None] * t[..., None, :])
    dt = E * a[..., None, :] * (1j * omega0 * k[:, None])
    return np.concatenate([E, dt], axis=-1)


@dataclass(eq=False)
class Fim:
    matrix: np.ndarray
    sigma2: float
    pattern: SamplingPattern
    singular: bool

    @property
    def logdet(self) -> float:
        if self.singular:
            return -np.inf
        return float(np.linalg.slogdet(self.matrix)[1])

    @property
    def crlb(self) -> Optional[np.ndarray]:
        """FIM^{-1}, or None when the information matrix is singular."""
        return None if self.singular else np.linalg.inv(self.matrix)


def _fim_matrices(a: np.ndarray, t: np.ndarray, pulse: PulseSpectrum, indices, omega0: float,
                  sigma2: np.ndarray) -> np.ndarray:
    J = fri_jacobian(a, t, pulse, indices, omega0)
    G = np.real(np.einsum("...ki,...kj->...ij", J.conj(), J))
    return (2.0 / sigma2)[..., None, None] * G


def fim(x: SparseVector, pulse: PulseSpectrum, pattern: SamplingPattern, sigma2: float,
        grid: GridConfig) -> Fim:
    """
    Fisher information of the retained Fourier samples in (a_1..a_L, t_1..t_L):
    FIM = (2 / sigma^2) Re(J^H J). Flagged singular when |K| < 2L or the
    matrix is not positive definite.
    """
    if not sigma2 > 0:
        raise ValueError(f"noise variance must be positive, got {sigma2!r}")
    if len(x.support) != grid.L:
        raise ValueError(f"FRI parameters need exactly L={grid.L} pulses, got {len(x.support)}")
    if pattern.N != grid.N or pulse.N != grid.N:
        raise DimensionError("pattern, pulse and grid sizes disagree")
    matrix = _fim_matrices(x.amplitudes, x.delays(grid), pulse, pattern.indices, grid.omega0,
                           np.asarray(float(sigma2)))
    singular = pattern.count < 2 * grid.L or np.linalg.slogdet(matrix)[0] <= 0
    return Fim(matrix, float(sigma2), pattern, bool(singular))


def _support_parameters(dataset: Dataset):
    """(Q, L) amplitudes and delays of every example."""
    X = dataset.amplitudes
    nz = X != 0
    if np.any(nz.sum(axis=1) != dataset.grid.L):
        raise ValueError(f"log-det CRLB needs exactly L={dataset.grid.L} pulses in every example")
    cols = np.nonzero(nz)[1].reshape(dataset.Q, dataset.grid.L)
    a = np.take_along_axis(X, cols, axis=1)
    return a, (cols + 1) * dataset.grid.delta


def crlb_cost(dataset: Dataset, pattern: SamplingPattern, sigma2=1.0) -> float:
    """(1/Q) sum_q log det FIM_q^{-1}; +inf if any FIM is singular. sigma2 is a scalar or per example."""
    grid = dataset.grid
    if pattern.N != grid.N:
        raise DimensionError("pattern length does not match the grid")
    if pattern.count < 2 * grid.L or dataset.Q == 0:
        return np.inf
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (dataset.Q,))
    if np.any(s2 <= 0):
        raise ValueError("noise variance must be positive")
    a, t = _support_parameters(dataset)
    total = 0.0
    for s in range(0, dataset.Q, _FIM_CHUNK):
        F = _fim_matrices(a[s:s + _FIM_CHUNK], t[s:s + _FIM_CHUNK], dataset.pulse, pattern.indices,
                          grid.omega0, s2[s:s + _FIM_CHUNK])
        sign, logdet = np.linalg.slogdet(F)
        if np.any(sign <= 0):
            return np.inf
        total -= float(np.sum(logdet))
    return total / dataset.Q


def empirical_cost(dataset: Dataset, pattern: SamplingPattern,
                   recover: Callable[[np.ndarray, SamplingPattern], np.ndarray]) -> float:
    """(1/Q) sum_q ||x_q - recover(diag(c) f_q)||^2 on the dataset's (possibly noisy) measurements."""
    F_bar, _ = dataset.measurements(pattern)
    estimates = np.real(np.asarray(recover(F_bar, pattern)))
    if estimates.shape != dataset.amplitudes.shape:
        raise DimensionError(f"recovery returned {estimates.shape}, expected {dataset.amplitudes.shape}")
    return float(np.sum((dataset.amplitudes - estimates) ** 2)) / max(dataset.Q, 1)


def fista_recovery(pulse: PulseSpectrum, L: int, cfg: Optional[RecoveryConfig] = None):
    """Recovery handle for empirical_cost: FISTA with known pulse, debiased on the top-L support."""
    def recover(F_bar: np.ndarray, pattern: SamplingPattern) -> np.ndarray:
        return fista_recover(F_bar, pulse, pattern, L, cfg)
    return recover


@dataclass(eq=False)
class SetCost:
    evaluator: Callable[[SamplingPattern], float]
    kind: str
    min_size: int = 0

    def __call__(self, pattern: SamplingPattern) -> float:
        value = float(self.evaluator(pattern))
        return np.inf if np.isnan(value) else value


def crlb_set_cost(dataset: Dataset, sigma2=1.0) -> SetCost:
    return SetCost(lambda p: crlb_cost(dataset, p, sigma2), CRLB, 2 * dataset.grid.L)


def empirical_set_cost(dataset: Dataset, recover) -> SetCost:
    return SetCost(lambda p: empirical_cost(dataset, p, recover), EMPIRICAL)


class RecallCounter:
    """Thread-safe count of cost evaluations (recovery recalls or trainings)."""

    def __init__(self):
        self.count = 0
        self._lock = threading.Lock()

    def add(self, n: int = 1) -> None:
        with self._lock:
            self.count += n


@dataclass
class GreedyStep:
    pattern: SamplingPattern
    chosen: Optional[int]
    cost: float
    candidate_costs: List[float] = field(default_factory=list)


def _best_candidate(cost: SetCost, candidates: List[int], build, counter: Optional[RecallCounter]):
    patterns = [build(i) for i in candidates]
    costs = parallel_map(cost, patterns)
    if counter is not None:
        counter.add(len(patterns))
    best = int(np.argmin(costs))
    if np.isinf(costs[best]):
        logger.warning("every candidate cost is infinite at |K|=%d; keeping index order", patterns[0].count)
    return candidates[best], patterns[best], costs


def greedy_backward(cost: SetCost, N: int, K_target: int, counter: Optional[RecallCounter] = None,
                    start: Optional[SamplingPattern] = None):
    """
    Start from the full pattern (or `start`) and repeatedly drop the index
    whose removal leaves the lowest cost, until |K| = K_target.
    Returns (pattern, history); history[0] is the starting pattern.
    """
    if not (1 <= K_target <= N):
        raise ValueError(f"K_target must lie in 1..{N}, got {K_target}")
    pattern = start if start is not None else SamplingPattern.full(N)
    history = [GreedyStep(pattern, None, np.nan)]
    while pattern.count > K_target:
        candidates = list(pattern.indices)
        chosen, pattern, costs = _best_candidate(cost, candidates, pattern.without_index, counter)
        history.append(GreedyStep(pattern, chosen, costs[candidates.index(chosen)], costs))
        logger.info("backward |K|=%d: dropped %d (cost %.6g)", pattern.count, chosen, history[-1].cost)
    return pattern, history


def greedy_forward(cost: SetCost, N: int, K_target: int, counter: Optional[RecallCounter] = None):
    """
    Start from the empty pattern and repeatedly add the index giving the
    lowest cost, until |K| = K_target. Costs with a minimum identifiable
    size (CRLB) are seeded by the backward pass down to that size first,
    so the history then begins at the seeded pattern.
    """
    if not (1 <= K_target <= N):
        raise ValueError(f"K_target must lie in 1..{N}, got {K_target}")
    if cost.min_size > 0:
        seed_size = min(cost.min_size, K_target)
        pattern, back = greedy_backward(cost, N, seed_size, counter)
        history = [GreedyStep(pattern, None, back[-1].cost)]
        logger.info("forward seeded by backward selection at |K|=%d", seed_size)
    else:
        pattern = SamplingPattern.empty(N)
        history = [GreedyStep(pattern, None, np.nan)]
    while pattern.count < K_target:
        taken = set(pattern.indices)
        candidates = [i for i in range(1, N + 1) if i not in taken]
        chosen, pattern, costs = _best_candidate(cost, candidates, pattern.with_index, counter)
        history.append(GreedyStep(pattern, chosen, costs[candidates.index(chosen)], costs))
        logger.info("forward |K|=%d: added %d (cost %.6g)", pattern.count, chosen, history[-1].cost)
    return pattern, history


def cost_trajectory(history: List[GreedyStep]) -> List[float]:
    return [float(s.cost) for s in history[1:]]
