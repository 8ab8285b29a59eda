# fri_jsr/jsr.py
"""
Joint subsampling and recovery: a greedy pattern search whose cost for each
candidate pattern is the validation error of a LISTA network trained for
that pattern.

Forward ladders grow from the empty pattern (|K^(k)| = k); backward ladders
shrink from the full pattern (|K^(k)| = N - k). Every step keeps the
winning candidate's trained parameters, so any rung of the ladder is usable
for recovery without retraining, and a ladder can be extended later.
"""
import hashlib
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from . import formats
from .core_model import Dataset, SamplingPattern
from .errors import FormatError, JsrError, TrainingDivergedError
from .parallel import parallel_map
from .selection import RecallCounter
from .sparse_recovery import ListaParams, TrainConfig, lista_mse, lista_train, validation_rows

logger = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"

LADDER_SCHEMA = "JSRLADDER1"
STEP_SCHEMA = "JSRSTEP1"


def derive_seed(base_seed: int, k: int) -> int:
    """Deterministic 63-bit seed for (base_seed, k)."""
    digest = hashlib.sha256(f"{int(base_seed)}:{int(k)}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(eq=False)
class JsrStep:
    k: int
    pattern: SamplingPattern
    chosen: int
    params: ListaParams
    validation_cost: float
    trainings: int
    wall_seconds: float = 0.0
    candidate_costs: Dict[int, float] = field(default_factory=dict)


@dataclass(eq=False)
class JsrLadder:
    direction: str
    N: int
    P: int
    base_seed: int
    steps: List[JsrStep] = field(default_factory=list)

    def __post_init__(self):
        if self.direction not in (FORWARD, BACKWARD):
            raise JsrError(f"unknown ladder direction {self.direction!r}")

    @property
    def initial(self) -> SamplingPattern:
        return SamplingPattern.empty(self.N) if self.direction == FORWARD else SamplingPattern.full(self.N)

    @property
    def endpoint(self) -> SamplingPattern:
        return self.steps[-1].pattern if self.steps else self.initial

    def size_at(self, k: int) -> int:
        return k if self.direction == FORWARD else self.N - k

    def step_for(self, K: int) -> Optional[JsrStep]:
        """The stored rung with |K^(k)| = K, if any."""
        k = K if self.direction == FORWARD else self.N - K
        if 1 <= k <= len(self.steps):
            return self.steps[k - 1]
        return None

    def covers(self, K: int) -> bool:
        if self.direction == FORWARD:
            return K <= self.endpoint.count
        return K >= self.endpoint.count

    def prefix(self, K: int) -> "JsrLadder":
        k = K if self.direction == FORWARD else self.N - K
        return replace(self, steps=list(self.steps[:k]))

    @property
    def trainings(self) -> int:
        return sum(s.trainings for s in self.steps)


def _train_candidate(dataset: Dataset, pattern: SamplingPattern, train_cfg: TrainConfig, P: int,
                     init_seed: int, shuffle_seed: int):
    try:
        params, log = lista_train(dataset, pattern, train_cfg, P, init_seed=init_seed, shuffle_seed=shuffle_seed)
    except TrainingDivergedError as e:
        logger.warning("candidate |K|=%d %s disqualified: %s", pattern.count, list(pattern.indices), e)
        return None, math.inf
    if not math.isfinite(log.best_val):
        logger.warning("candidate |K|=%d %s disqualified: validation cost %r",
                       pattern.count, list(pattern.indices), log.best_val)
        return None, math.inf
    return params, log.best_val


def _advance(ladder: JsrLadder, dataset: Dataset, train_cfg: TrainConfig,
             counter: Optional[RecallCounter]) -> JsrStep:
    k = len(ladder.steps) + 1
    current = ladder.endpoint
    started = time.time()
    step_seed = derive_seed(ladder.base_seed, k)
    if ladder.direction == FORWARD:
        taken = set(current.indices)
        candidates = [i for i in range(1, ladder.N + 1) if i not in taken]
        build = current.with_index
    else:
        candidates = list(current.indices)
        build = current.without_index

    def evaluate(i):
        return _train_candidate(dataset, build(i), train_cfg, ladder.P, step_seed, derive_seed(step_seed, i))

    results = parallel_map(evaluate, candidates)
    if counter is not None:
        counter.add(len(candidates))
    costs = [c for _, c in results]
    best = int(np.argmin(costs))
    if not math.isfinite(costs[best]):
        raise JsrError(f"every candidate at step {k} failed to train")
    chosen = candidates[best]
    step = JsrStep(k, build(chosen), chosen, results[best][0], costs[best], len(candidates),
                   time.time() - started, dict(zip(candidates, costs)))
    logger.info("JSR %s step %d: index %d -> |K|=%d, validation MSE %.6g (%d trainings, %.1fs)",
                ladder.direction, k, chosen, step.pattern.count, step.validation_cost,
                step.trainings, step.wall_seconds)
    return step


def _check_target(N: int, K_target: int) -> None:
    if not (1 <= K_target <= N):
        raise JsrError(f"K_target must lie in 1..{N}, got {K_target}")


def _grow(ladder: JsrLadder, K_target: int, dataset: Dataset, train_cfg: TrainConfig,
          counter: Optional[RecallCounter]) -> JsrLadder:
    if dataset.Q == 0:
        raise JsrError("cannot run JSR on an empty dataset")
    if dataset.grid.N != ladder.N:
        raise JsrError(f"dataset grid N={dataset.grid.N} does not match ladder N={ladder.N}")
    while ladder.endpoint.count != K_target:
        ladder.steps.append(_advance(ladder, dataset, train_cfg, counter))
    return ladder


def jsr_forward(dataset: Dataset, K_target: int, train_cfg: TrainConfig, P: int = 10, base_seed: int = 0,
                counter: Optional[RecallCounter] = None) -> JsrLadder:
    """Grow a pattern from empty to K_target indices, one trained network per candidate."""
    _check_target(dataset.grid.N, K_target)
    return _grow(JsrLadder(FORWARD, dataset.grid.N, P, base_seed), K_target, dataset, train_cfg, counter)


def jsr_backward(dataset: Dataset, K_target: int, train_cfg: TrainConfig, P: int = 10, base_seed: int = 0,
                 counter: Optional[RecallCounter] = None) -> JsrLadder:
    """Shrink the full pattern to K_target indices, one trained network per candidate."""
    _check_target(dataset.grid.N, K_target)
    return _grow(JsrLadder(BACKWARD, dataset.grid.N, P, base_seed), K_target, dataset, train_cfg, counter)


def jsr_extend(ladder: JsrLadder, new_K_target: int, dataset: Dataset, train_cfg: TrainConfig,
               direction: Optional[str] = None, counter: Optional[RecallCounter] = None) -> JsrLadder:
    """
    Resume a ladder toward new_K_target. Targets the ladder already passed
    through return the stored prefix without training. The input ladder is
    left untouched.
    """
    if direction is not None and direction != ladder.direction:
        raise JsrError(f"cannot extend a {ladder.direction} ladder in the {direction} direction")
    _check_target(ladder.N, new_K_target)
    if ladder.covers(new_K_target):
        logger.info("|K|=%d already on the %s ladder; no training needed", new_K_target, ladder.direction)
        return ladder.prefix(new_K_target)
    return _grow(replace(ladder, steps=list(ladder.steps)), new_K_target, dataset, train_cfg, counter)


def evaluate_step(step: JsrStep, dataset: Dataset, train_cfg: TrainConfig) -> float:
    """Validation MSE of a stored rung, recomputed on the same split used during selection."""
    F_bar, _ = dataset.measurements(step.pattern)
    rows = validation_rows(dataset.Q, train_cfg)
    return lista_mse(step.params, F_bar[rows], dataset.amplitudes[rows])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _step_dir(directory: str, k: int) -> str:
    return os.path.join(directory, f"step_{k:03d}")


def save_ladder(ladder: JsrLadder, directory: str, method: Optional[str] = None) -> None:
    method = method or ("jsr1" if ladder.direction == FORWARD else "jsr2")
    os.makedirs(directory, exist_ok=True)
    costs = []
    for step in ladder.steps:
        d = _step_dir(directory, step.k)
        costs.append(step.validation_cost)
        formats.save_pattern(os.path.join(d, "pattern.json"), step.pattern, method, costs)
        formats.save_params(os.path.join(d, "params.json"), step.params)
        formats.write_json(os.path.join(d, "summary.json"), {
            "schema": STEP_SCHEMA,
            "k": step.k,
            "chosen": step.chosen,
            "validation_cost": formats.encode_float(step.validation_cost),
            "trainings": step.trainings,
            "wall_seconds": step.wall_seconds,
            "candidate_costs": {str(i): formats.encode_float(c) for i, c in step.candidate_costs.items()},
        })
    formats.write_json(os.path.join(directory, "ladder.json"), {
        "schema": LADDER_SCHEMA,
        "direction": ladder.direction,
        "N": ladder.N,
        "P": ladder.P,
        "base_seed": ladder.base_seed,
        "steps": [os.path.basename(_step_dir(directory, s.k)) for s in ladder.steps],
    })


def load_ladder(directory: str) -> JsrLadder:
    manifest = formats.read_json(os.path.join(directory, "ladder.json"), LADDER_SCHEMA)
    try:
        ladder = JsrLadder(manifest["direction"], int(manifest["N"]), int(manifest["P"]),
                           int(manifest["base_seed"]))
        for name in manifest["steps"]:
            d = os.path.join(directory, name)
            pattern, _, _ = formats.load_pattern(os.path.join(d, "pattern.json"))
            params = formats.load_params(os.path.join(d, "params.json"))
            s = formats.read_json(os.path.join(d, "summary.json"), STEP_SCHEMA)
            ladder.steps.append(JsrStep(
                int(s["k"]), pattern, int(s["chosen"]), params, float(s["validation_cost"]),
                int(s["trainings"]), float(s["wall_seconds"]),
                {int(i): float(c) for i, c in s.get("candidate_costs", {}).items()}))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{directory}: malformed ladder: {e}") from e
    for step in ladder.steps:
        if step.pattern.count != ladder.size_at(step.k):
            raise FormatError(f"{directory}: step {step.k} has |K|={step.pattern.count}, "
                              f"expected {ladder.size_at(step.k)}")
    return ladder
