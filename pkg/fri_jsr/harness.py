# fri_jsr/harness.py
"""
Experiment orchestration: the six sampling/recovery methods, NMSE sweeps,
the structured-sparsity cross-test, pattern overlays and single-instance
recovery dumps. Everything here is plumbing over selection/jsr/sparse_recovery;
outputs are plot-ready CSV, never figures.
"""
import csv
import itertools
import logging
import math
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import formats
from .core_model import (Dataset, PulseSpectrum, SamplingPattern, SparsityModel, floor_db, generate_dataset,
                         hit_rate, is_clean, make_pulse_spectrum, nmse, split_dataset)
from .errors import ConfigError, DimensionError
from .jsr import JsrLadder, derive_seed, jsr_backward, jsr_extend, jsr_forward, save_ladder
from .parallel import parallel_map
from .selection import (GreedyStep, cost_trajectory, crlb_set_cost, empirical_set_cost, fista_recovery,
                        greedy_backward)
from .settings import ExperimentConfig
from .sparse_recovery import ListaParams, fista_recover, lista_forward, lista_train

logger = logging.getLogger(__name__)


class MethodId(str, Enum):
    RAND_FISTA = "rand_fista"
    G_CRLB_FISTA = "g_crlb_fista"
    G_FISTA_FISTA = "g_fista_fista"
    G_FISTA_LISTA = "g_fista_lista"
    JSR1 = "jsr1"
    JSR2 = "jsr2"

    @classmethod
    def parse(cls, name) -> "MethodId":
        try:
            return cls(str(name.value if isinstance(name, cls) else name).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown method {name!r}; expected one of {[m.value for m in cls]}") from None

    @property
    def learned(self) -> bool:
        return self in (MethodId.G_FISTA_LISTA, MethodId.JSR1, MethodId.JSR2)


# stream tag for the random pattern draw, kept apart from dataset streams
_RAND_PATTERN_STREAM = 0xA11


def snr_label(snr_db) -> str:
    return "clean" if is_clean(snr_db) else f"{float(snr_db):g}"


def parse_snr(value) -> Optional[float]:
    """'clean' / None / +inf -> None, otherwise a finite dB value."""
    if is_clean(value):
        return None
    try:
        snr = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"SNR must be a number of dB or 'clean', got {value!r}") from None
    if not math.isfinite(snr):
        raise ConfigError(f"SNR must be finite or 'clean', got {value!r}")
    return snr


@dataclass
class ResultRow:
    method: MethodId
    K: int
    snr_db: Optional[float]
    nmse_db: float
    hit_rate: float
    wall_seconds: float = field(compare=False)
    seed: int = 0

    def __post_init__(self):
        self.method = MethodId.parse(self.method)
        self.nmse_db = floor_db(self.nmse_db)
        if not (0.0 <= self.hit_rate <= 1.0):
            raise ValueError(f"hit rate {self.hit_rate} outside [0, 1]")

    def as_csv_row(self) -> list:
        return [self.method.value, self.K, snr_label(self.snr_db), repr(float(self.nmse_db)),
                repr(float(self.hit_rate)), f"{self.wall_seconds:.3f}", self.seed]


@dataclass
class SummaryRow:
    """Seed statistics of one (method, K, SNR) cell; std is the sample std, 0 for a single seed."""
    method: MethodId
    K: int
    snr_db: Optional[float]
    seeds: int
    nmse_db_mean: float
    nmse_db_std: float
    hit_rate_mean: float
    hit_rate_std: float

    def as_csv_row(self) -> list:
        return [self.method.value, self.K, snr_label(self.snr_db), self.seeds,
                repr(self.nmse_db_mean), repr(self.nmse_db_std), repr(self.hit_rate_mean), repr(self.hit_rate_std)]


def _mean_std(values: List[float]) -> Tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), (float(a.std(ddof=1)) if a.size > 1 else 0.0)


def aggregate_rows(rows: Sequence[ResultRow]) -> List[SummaryRow]:
    """Average per-seed rows over seeds, ordered by method, then SNR as first seen, then K."""
    groups: Dict[tuple, List[ResultRow]] = {}
    snr_order: Dict[str, int] = {}
    for r in rows:
        snr_order.setdefault(snr_label(r.snr_db), len(snr_order))
        groups.setdefault((r.method, snr_label(r.snr_db), r.K), []).append(r)
    methods = list(MethodId)
    out = []
    for method, snr, K in sorted(groups, key=lambda g: (methods.index(g[0]), snr_order[g[1]], g[2])):
        cell = groups[(method, snr, K)]
        nmse_mean, nmse_std = _mean_std([r.nmse_db for r in cell])
        hit_mean, hit_std = _mean_std([r.hit_rate for r in cell])
        out.append(SummaryRow(method, K, cell[0].snr_db, len({r.seed for r in cell}), nmse_mean, nmse_std,
                              hit_mean, hit_std))
    return out


@dataclass(eq=False)
class FittedMethod:
    """What a method's selection stage produced: the pattern and, for learned recovery, the network."""
    method: MethodId
    pattern: SamplingPattern
    params: Optional[ListaParams] = None
    costs: List[float] = field(default_factory=list)
    ladder: Optional[JsrLadder] = None


class SelectionCache:
    """
    Greedy histories and JSR ladders keyed by (method, noise, seed), so a
    sweep over K reuses the nested patterns already found instead of
    restarting the search for every K.
    """

    def __init__(self):
        self.histories: Dict[tuple, List[GreedyStep]] = {}
        self.ladders: Dict[tuple, JsrLadder] = {}


def _check_k(K: int, N: int) -> None:
    if not (1 <= int(K) <= N):
        raise ConfigError(f"K must lie in 1..{N}, got {K}")


def _selection_subset(train: Dataset, cfg: ExperimentConfig) -> Dataset:
    n = min(max(int(cfg.selection.examples), 1), train.Q)
    return train.subset(np.arange(n))


def _greedy_pattern(method: MethodId, train: Dataset, K: int, cfg: ExperimentConfig, key,
                    cache: Optional[SelectionCache]) -> Tuple[SamplingPattern, List[float]]:
    history = cache.histories.get(key) if cache is not None else None
    if history is None or history[-1].pattern.count > K:
        sel = _selection_subset(train, cfg)
        if method == MethodId.G_CRLB_FISTA:
            cost = crlb_set_cost(sel, sel.full_pattern_noise_variance())
        else:
            cost = empirical_set_cost(sel, fista_recovery(sel.pulse, sel.grid.L, cfg.recovery))
        start = history[-1].pattern if history else None
        _, tail = greedy_backward(cost, train.grid.N, K, start=start)
        history = history + tail[1:] if history else tail
        if cache is not None:
            cache.histories[key] = history
    upto = [s for s in history if s.pattern.count >= K]
    return upto[-1].pattern, cost_trajectory(upto)


def jsr_base_seed(cfg: ExperimentConfig, seed: int) -> int:
    """Ladder base seed for a method seed: derive_seed(cfg.jsr.base_seed, seed)."""
    return derive_seed(cfg.jsr.base_seed, seed)


def _jsr_ladder(method: MethodId, train: Dataset, K: int, seed: int, cfg: ExperimentConfig, key,
                cache: Optional[SelectionCache]) -> JsrLadder:
    ladder = cache.ladders.get(key) if cache is not None else None
    if ladder is None:
        run = jsr_forward if method == MethodId.JSR1 else jsr_backward
        ladder = run(train, K, cfg.train, cfg.jsr.P, base_seed=jsr_base_seed(cfg, seed))
    else:
        ladder = jsr_extend(ladder, K, train, cfg.train)
    if cache is not None:
        stored = cache.ladders.get(key)
        if stored is None or len(ladder.steps) > len(stored.steps):
            cache.ladders[key] = ladder
    return ladder.prefix(K)


def fit_method(method, train: Dataset, K: int, seed: int, cfg: ExperimentConfig,
               cache: Optional[SelectionCache] = None) -> FittedMethod:
    """Run a method's selection (and, if learned, training) stage on the training set."""
    method = MethodId.parse(method)
    N = train.grid.N
    _check_k(K, N)
    key = (method, train.noise_spec, int(seed))
    if method == MethodId.RAND_FISTA:
        rng = np.random.default_rng([int(seed), _RAND_PATTERN_STREAM])
        return FittedMethod(method, SamplingPattern.from_indices(N, rng.choice(N, K, replace=False) + 1))
    if method in (MethodId.G_CRLB_FISTA, MethodId.G_FISTA_FISTA, MethodId.G_FISTA_LISTA):
        # G-FISTA+LISTA shares the G-FISTA+FISTA search
        search = MethodId.G_FISTA_FISTA if method == MethodId.G_FISTA_LISTA else method
        pattern, costs = _greedy_pattern(search, train, K, cfg, (search,) + key[1:], cache)
        params = None
        if method == MethodId.G_FISTA_LISTA:
            params, _ = lista_train(train, pattern, cfg.train, cfg.jsr.P, init_seed=int(seed))
        return FittedMethod(method, pattern, params, costs)
    ladder = _jsr_ladder(method, train, K, seed, cfg, key, cache)
    last = ladder.steps[-1] if ladder.steps else None
    if last is None:
        # K = N on a backward ladder: no rung exists, train once on the full pattern
        params, log = lista_train(train, ladder.endpoint, cfg.train, cfg.jsr.P,
                                  init_seed=int(seed))
        return FittedMethod(method, ladder.endpoint, params, [log.best_val], ladder)
    return FittedMethod(method, last.pattern, last.params, [s.validation_cost for s in ladder.steps], ladder)


def recover(fitted: FittedMethod, test: Dataset, cfg: ExperimentConfig) -> np.ndarray:
    """Estimates for every test example: LISTA when the method learned a network, FISTA otherwise."""
    F_bar, _ = test.measurements(fitted.pattern)
    if fitted.params is not None:
        return lista_forward(fitted.params, F_bar)
    return fista_recover(F_bar, test.pulse, fitted.pattern, test.grid.L, cfg.recovery)


def _check_pair(train: Dataset, test: Dataset) -> None:
    if train.grid != test.grid or not np.array_equal(train.pulse.samples, test.pulse.samples):
        raise DimensionError("training and test sets must share grid and pulse")
    if np.intersect1d(train.index, test.index).size and train.seed == test.seed:
        raise ValueError("training and test sets share examples")


def run_method(method, train: Dataset, test: Dataset, K: int, snr_db, seed: int, cfg: ExperimentConfig,
               cache: Optional[SelectionCache] = None) -> ResultRow:
    """Select on the training set, recover the test set, report NMSE and hit rate."""
    _check_pair(train, test)
    snr = parse_snr(snr_db)
    train, test = train.with_noise(snr), test.with_noise(snr)
    started = time.time()
    fitted = fit_method(method, train, K, seed, cfg, cache)
    estimates = recover(fitted, test, cfg)
    row = ResultRow(fitted.method, int(K), snr, floor_db(nmse(test.amplitudes, estimates)),
                    hit_rate(test.amplitudes, estimates, test.grid.L), time.time() - started, int(seed))
    logger.info("%s K=%d snr=%s seed=%d: NMSE %.2f dB, hit rate %.4f (%.1fs)", row.method.value, K,
                snr_label(snr), seed, row.nmse_db, row.hit_rate, row.wall_seconds)
    return row


def sparsity_model(blocks) -> SparsityModel:
    """Structured model from config blocks [lo, hi, count], uniform when there are none."""
    if not blocks:
        return SparsityModel.uniform()
    try:
        return SparsityModel.structured(blocks)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"sparsity blocks must be [lo, hi, count] triples, got {blocks!r}") from e


def make_datasets(cfg: ExperimentConfig, q_train: Optional[int] = None, q_test: Optional[int] = None,
                  sparsity: Optional[SparsityModel] = None, snr_db=None,
                  pulse: Optional[PulseSpectrum] = None, data_seed: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """Disjoint train/test sets drawn from one seeded sequence (cfg.data.seed unless data_seed is given)."""
    q_train = cfg.data.q_train if q_train is None else q_train
    q_test = cfg.data.q_test if q_test is None else q_test
    if q_train < 1 or q_test < 1:
        raise ConfigError(f"need at least one training and one test example, got {q_train} and {q_test}")
    if sparsity is None:
        sparsity = sparsity_model(cfg.data.sparsity)
    pulse = pulse or make_pulse_spectrum(cfg.grid)
    try:
        sparsity.validate(cfg.grid)
    except ValueError as e:
        raise ConfigError(f"invalid sparsity model: {e}") from e
    seed = cfg.data.seed if data_seed is None else data_seed
    full = generate_dataset(cfg.grid, pulse, q_train + q_test, sparsity, seed, parse_snr(snr_db))
    return split_dataset(full, q_test)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _visit_order(method: MethodId, ks: Sequence[int]) -> List[int]:
    """Deepest K first, so the rest of the sweep reads nested patterns from the cache."""
    return sorted(ks, reverse=(method == MethodId.JSR1))


def _artifact_dir(out_dir: str, method: MethodId, K: int, snr, seed: int) -> str:
    return os.path.join(out_dir, "artifacts", f"{method.value}_K{K}_snr-{snr_label(snr)}_seed{seed}")


def _persist(fitted: FittedMethod, directory: str) -> None:
    try:
        formats.save_pattern(os.path.join(directory, "pattern.json"), fitted.pattern, fitted.method.value,
                             fitted.costs)
        if fitted.params is not None:
            formats.save_params(os.path.join(directory, "params.json"), fitted.params)
    except OSError as e:
        logger.warning("could not persist artifacts to %s: %s", directory, e)


def run_sweep(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> List[ResultRow]:
    """
    methods x SNRs x seeds x K. Datasets are shared per SNR; each
    (method, SNR, seed) chain walks its K values sequentially through a
    SelectionCache, chains run under parallel_map. Writes metrics.csv, the seed-averaged
    metrics_summary.csv and per-cell pattern/parameter artifacts when out_dir
    is given.
    """
    methods = [MethodId.parse(m) for m in cfg.sweep.methods]
    snrs = [parse_snr(s) for s in cfg.sweep.snrs]
    for K in cfg.sweep.ks:
        _check_k(K, cfg.grid.N)
    rows: List[ResultRow] = []
    if methods and cfg.sweep.ks and cfg.sweep.seeds:
        train, test = make_datasets(cfg)
        chains = list(itertools.product(snrs, methods, cfg.sweep.seeds))

        def run_chain(chain):
            snr, method, seed = chain
            cache = SelectionCache()
            tr, te = train.with_noise(snr), test.with_noise(snr)
            out = []
            for K in _visit_order(method, cfg.sweep.ks):
                started = time.time()
                fitted = fit_method(method, tr, K, seed, cfg, cache)
                est = recover(fitted, te, cfg)
                out.append(ResultRow(method, K, snr, floor_db(nmse(te.amplitudes, est)),
                                     hit_rate(te.amplitudes, est, te.grid.L), time.time() - started, int(seed)))
                logger.info("sweep %s K=%d snr=%s seed=%d: NMSE %.2f dB", method.value, K, snr_label(snr),
                            seed, out[-1].nmse_db)
                if out_dir:
                    _persist(fitted, _artifact_dir(out_dir, method, K, snr, seed))
            if out_dir and method in (MethodId.JSR1, MethodId.JSR2) and cache.ladders:
                ladder = next(iter(cache.ladders.values()))
                try:
                    save_ladder(ladder, os.path.join(out_dir, "ladders", f"{method.value}_snr-{snr_label(snr)}"
                                                                         f"_seed{seed}"), method.value)
                except OSError as e:
                    logger.warning("could not persist ladder: %s", e)
            return sorted(out, key=lambda r: r.K)

        for chunk in parallel_map(run_chain, chains):
            rows.extend(chunk)
    if out_dir:
        formats.write_metrics(os.path.join(out_dir, "metrics.csv"), rows)
        formats.write_summary(os.path.join(out_dir, "metrics_summary.csv"), aggregate_rows(rows))
    return rows


# ---------------------------------------------------------------------------
# structured-sparsity cross-test
# ---------------------------------------------------------------------------

@dataclass
class CrossTestResult:
    """table[j, c]: NMSE (dB) on test set j for combination c = (pattern a, params b)."""
    table: np.ndarray
    combos: List[Tuple[int, int]]
    patterns: List[SamplingPattern]

    def labels(self) -> List[str]:
        return [f"K{a + 1},theta{b + 1}" for a, b in self.combos]


def cross_evaluate(fits: Sequence[FittedMethod], tests: Sequence[Dataset]) -> CrossTestResult:
    """Every (pattern_a, params_b) pair on every test set; params_b never saw pattern_a during training."""
    grids = {t.grid for t in tests}
    if len(grids) != 1 or any(f.pattern.N != tests[0].grid.N for f in fits):
        raise DimensionError("cross-test datasets and patterns must share one grid")
    if any(f.params is None for f in fits):
        raise ValueError("cross-test needs a learned network for every pattern")
    combos = [(a, b) for b in range(len(fits)) for a in range(len(fits))]
    table = np.zeros((len(tests), len(combos)))
    for j, test in enumerate(tests):
        for c, (a, b) in enumerate(combos):
            F_bar, _ = test.measurements(fits[a].pattern)
            table[j, c] = floor_db(nmse(test.amplitudes, lista_forward(fits[b].params, F_bar)))
    return CrossTestResult(table, combos, [f.pattern for f in fits])


def cross_test_data_seed(cfg: ExperimentConfig, i: int) -> int:
    return derive_seed(cfg.data.seed, i)


def run_cross_test(cfg: ExperimentConfig, seed: int = 0) -> CrossTestResult:
    """
    Train JSR-2 on each structured dataset, then test every pattern/network
    pairing on every test set. Dataset i is drawn from
    derive_seed(cfg.data.seed, i), so no two datasets share a sequence.
    """
    ct = cfg.cross_test
    if not ct.datasets:
        raise ConfigError("cross-test needs at least one structured dataset")
    pulse = make_pulse_spectrum(cfg.grid)
    fits, tests = [], []
    for i, blocks in enumerate(ct.datasets):
        train, test = make_datasets(cfg, ct.q_train, ct.q_test, sparsity_model(blocks), ct.snr_db, pulse,
                                    data_seed=cross_test_data_seed(cfg, i))
        logger.info("cross-test dataset %d (%s): training JSR-2 to K=%d", i + 1, blocks, ct.k)
        fits.append(fit_method(MethodId.JSR2, train, ct.k, seed, cfg))
        tests.append(test)
    result = cross_evaluate(fits, tests)
    for j, row in enumerate(result.table):
        logger.info("test set %d: %s", j + 1,
                    ", ".join(f"{lab}={v:.2f} dB" for lab, v in zip(result.labels(), row)))
    return result


def write_cross_table(result: CrossTestResult, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["test_set"] + result.labels())
        for j, row in enumerate(result.table):
            w.writerow([j + 1] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# plot-ready series
# ---------------------------------------------------------------------------

def pattern_spread(pattern: SamplingPattern) -> float:
    """Mean pairwise distance between selected indices (0 for fewer than two)."""
    idx = np.asarray(pattern.indices, dtype=np.float64)
    if idx.size < 2:
        return 0.0
    d = np.abs(idx[:, None] - idx[None, :])
    return float(d[np.triu_indices(idx.size, 1)].mean())


@dataclass
class OverlaySeries:
    names: List[str]
    rows: List[list]
    spread: Dict[str, float]


def emit_pattern_overlay(patterns: Dict[str, SamplingPattern], pulse: PulseSpectrum,
                         out_dir: Optional[str] = None) -> OverlaySeries:
    """Rows (k, |h_k|, one 0/1 column per method) sorted by k, plus each method's index spread."""
    names = list(patterns)
    if any(p.N != pulse.N for p in patterns.values()):
        raise DimensionError("overlay patterns must share the pulse's grid size")
    mag = np.abs(pulse.samples)
    rows = [[k, float(mag[k - 1])] + [int(patterns[n].mask[k - 1]) for n in names]
            for k in range(1, pulse.N + 1)]
    series = OverlaySeries(names, rows, {n: pattern_spread(patterns[n]) for n in names})
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "overlay.csv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["k", "abs_h"] + names)
            w.writerows(rows)
        with open(os.path.join(out_dir, "overlay_spread.csv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["method", "spread"])
            w.writerows([n, repr(series.spread[n])] for n in names)
    return series


def run_instance(cfg: ExperimentConfig, K: int, snr_db=None, index: int = 0, seed: int = 0,
                 methods: Optional[Sequence[Union[str, MethodId]]] = None,
                 out_path: Optional[str] = None) -> List[list]:
    """One test example recovered by every method: rows (n, truth, estimate per method)."""
    methods = [MethodId.parse(m) for m in (methods if methods is not None else cfg.sweep.methods)]
    train, test = make_datasets(cfg, snr_db=snr_db)
    if not (0 <= index < test.Q):
        raise ConfigError(f"test example index must lie in 0..{test.Q - 1}, got {index}")
    one = test.subset([index])
    columns = []
    for method in methods:
        fitted = fit_method(method, train, K, seed, cfg)
        columns.append(recover(fitted, one, cfg)[0])
    truth = one.amplitudes[0]
    rows = [[n + 1, float(truth[n])] + [float(c[n]) for c in columns] for n in range(test.grid.N)]
    if out_path:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        with open(out_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["n", "truth"] + [m.value for m in methods])
            w.writerows(rows)
    return rows
