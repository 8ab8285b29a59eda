# fri_jsr/sparse_recovery.py
"""
l1 recovery for masked Fourier measurements: soft thresholding, ISTA and
FISTA (batched over examples), least-squares debiasing, and the LISTA
unrolled network with hand-written reverse-mode gradients and Adam training.

Complex gradients follow the conjugate (Wirtinger) convention: for a real loss
and complex parameter w = a + jb the stored gradient is dL/da + j dL/db.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core_model import Dataset, MeasurementBasis, PulseSpectrum, SamplingPattern, measurement_basis
from .errors import DimensionError, TrainingDivergedError

logger = logging.getLogger(__name__)

ISTA_INIT = "ista"
RANDOM_INIT = "random"
COSINE = "cosine"
CONSTANT = "constant"


def soft_threshold(v, alpha: float):
    """Phase-preserving shrinkage (v/|v|) max(|v| - alpha, 0); real input stays real."""
    if alpha < 0:
        raise ValueError(f"threshold must be non-negative, got {alpha!r}")
    v = np.asarray(v)
    if not np.iscomplexobj(v):
        return np.sign(v) * np.maximum(np.abs(v) - alpha, 0.0)
    mag = np.abs(v)
    scale = np.maximum(mag - alpha, 0.0) / np.where(mag > 0.0, mag, 1.0)
    return v * scale


def measurement_matrix(pulse: PulseSpectrum, pattern: SamplingPattern,
                       basis: Optional[MeasurementBasis] = None, compact: bool = False) -> np.ndarray:
    """B = diag(c) diag(h) A; compact keeps only the |K| retained rows."""
    basis = basis or measurement_basis(pattern.N)
    B = pulse.samples[:, None] * basis.entries
    if compact:
        return B[pattern.mask]
    return np.where(pattern.mask[:, None], B, 0.0)


def spectral_norm_sq(B: np.ndarray) -> float:
    """||B||_2^2, the largest eigenvalue of B^H B, from the singular values."""
    if B.size == 0 or not np.any(B):
        return 0.0
    return float(np.linalg.norm(B, 2) ** 2)


@dataclass
class IstaConfig:
    lam: float = 0.0
    mu: Optional[float] = None
    max_iters: int = 500
    tol: float = 1e-6
    real_domain: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"regularization weight must be non-negative, got {self.lam!r}")
        if self.mu is not None and not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolverResult:
    x: np.ndarray
    objective: List[float]
    iterations: int
    converged: bool


def l1_objective(f_bar: np.ndarray, B: np.ndarray, x: np.ndarray, lam) -> float:
    """0.5 ||f - Bx||^2 + lam ||x||_1, summed over columns for batches."""
    r = f_bar - B @ x
    lam = np.asarray(lam, dtype=np.float64)
    return float(0.5 * np.sum(np.abs(r) ** 2) + np.sum(lam * np.abs(x).sum(axis=0)))


def _as_columns(f_bar: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, bool]:
    f_bar = np.asarray(f_bar, dtype=np.complex128)
    single = f_bar.ndim == 1
    F = f_bar[:, None] if single else f_bar
    if B.ndim != 2 or F.shape[0] != B.shape[0]:
        raise DimensionError(f"measurement shape {f_bar.shape} incompatible with B {B.shape}")
    return F, single


def _proximal_gradient(f_bar, B, cfg: IstaConfig, x0, accelerate: bool, lam=None,
                       record: bool = True) -> SolverResult:
    F, single = _as_columns(f_bar, B)
    n, q = B.shape[1], F.shape[1]
    lam = np.full(q, cfg.lam) if lam is None else np.broadcast_to(np.asarray(lam, dtype=np.float64), (q,))
    mu = cfg.mu if cfg.mu is not None else spectral_norm_sq(B)
    if not mu > 0:
        raise ValueError(f"step parameter mu must be positive, got {mu!r}")
    dtype = np.float64 if cfg.real_domain else np.complex128
    if x0 is None:
        x = np.zeros((n, q), dtype=dtype)
    else:
        x = np.asarray(x0).reshape(n, -1).astype(dtype, copy=True)
        if x.shape != (n, q):
            raise DimensionError(f"x0 shape {np.shape(x0)} does not match ({n}, {q})")
    BH = B.conj().T
    BHF = BH @ F
    BHB = BH @ B
    if cfg.real_domain:
        BHF, BHB = BHF.real, BHB.real
    thresh = lam / mu
    objective = [l1_objective(F, B, x, lam)] if record else []
    z, t = x, 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad_pt = z if accelerate else x
        v = grad_pt - (BHB @ grad_pt - BHF) / mu
        x_new = _shrink_columns(v, thresh)
        if accelerate:
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            z = x_new + ((t - 1.0) / t_next) * (x_new - x)
            t = t_next
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-300)
        x = x_new
        if record:
            objective.append(l1_objective(F, B, x, lam))
        if change < cfg.tol:
            converged = True
            break
    return SolverResult(x[:, 0] if single else x, objective, it, converged)


def _shrink_columns(v: np.ndarray, thresh: np.ndarray) -> np.ndarray:
    """Soft threshold column j of v by thresh[j]."""
    mag = np.abs(v)
    scale = np.maximum(mag - thresh[None, :], 0.0) / np.where(mag > 0.0, mag, 1.0)
    return v * scale


def ista_solve(f_bar: np.ndarray, B: np.ndarray, cfg: IstaConfig, x0=None, lam=None,
               record: bool = True) -> SolverResult:
    """
    x <- T_{lam/mu}{ (I - B^H B / mu) x + B^H f / mu } until the relative change
    drops below cfg.tol. mu defaults to ||B||_2^2 (exact). `lam` overrides
    cfg.lam per column for batched (N x Q) measurements.
    """
    return _proximal_gradient(f_bar, B, cfg, x0, accelerate=False, lam=lam, record=record)


def fista_solve(f_bar: np.ndarray, B: np.ndarray, cfg: IstaConfig, x0=None, lam=None,
                record: bool = True) -> SolverResult:
    """ISTA step at an extrapolated point, momentum t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2."""
    return _proximal_gradient(f_bar, B, cfg, x0, accelerate=True, lam=lam, record=record)


def default_lambda(f_bar: np.ndarray, B: np.ndarray, ratio: float = 0.1) -> np.ndarray:
    """lam = ratio * ||B^H f||_inf, per column."""
    F, _ = _as_columns(f_bar, B)
    return ratio * np.max(np.abs(B.conj().T @ F), axis=0)


def debias(f_bar: np.ndarray, B: np.ndarray, x: np.ndarray, support_size: Optional[int] = None,
           real_domain: bool = True) -> np.ndarray:
    """
    Least-squares amplitudes on the detected support: the nonzeros of x, or
    its `support_size` largest magnitudes. The support is capped at the number
    of equations available.
    """
    f_bar = np.asarray(f_bar, dtype=np.complex128)
    x = np.asarray(x)
    n_eq = 2 * B.shape[0] if real_domain else B.shape[0]
    mag = np.abs(x)
    order = np.argsort(-mag, kind="stable")
    size = int(np.count_nonzero(mag)) if support_size is None else int(support_size)
    support = np.sort(order[:max(0, min(size, n_eq, x.shape[0]))])
    out = np.zeros(x.shape[0], dtype=np.float64 if real_domain else np.complex128)
    if support.size == 0:
        return out
    Bs = B[:, support]
    if real_domain:
        A = np.vstack([Bs.real, Bs.imag])
        b = np.concatenate([f_bar.real, f_bar.imag])
    else:
        A, b = Bs, f_bar
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    out[support] = coef
    return out


@dataclass
class RecoveryConfig:
    """FISTA baseline recovery settings."""
    lam_ratio: float = 0.1
    max_iters: int = 500
    tol: float = 1e-6
    real_domain: bool = True
    debias: bool = True


def fista_recover(F_bar: np.ndarray, pulse: PulseSpectrum, pattern: SamplingPattern, L: Optional[int],
                  cfg: Optional[RecoveryConfig] = None) -> np.ndarray:
    """
    Recover every row of F_bar (Q, N) with FISTA on the retained rows, then
    debias on the top-L support. Returns real (Q, N) estimates.
    """
    cfg = cfg or RecoveryConfig()
    F_bar = np.atleast_2d(np.asarray(F_bar, dtype=np.complex128))
    Q, N = F_bar.shape
    if pattern.count == 0:
        return np.zeros((Q, N))
    B = measurement_matrix(pulse, pattern, compact=True)
    Fk = F_bar[:, pattern.mask].T
    lam = default_lambda(Fk, B, cfg.lam_ratio)
    solver_cfg = IstaConfig(lam=0.0, max_iters=cfg.max_iters, tol=cfg.tol, real_domain=cfg.real_domain)
    res = fista_solve(Fk, B, solver_cfg, lam=lam, record=False)
    X = np.real(res.x).T.copy() if cfg.real_domain else res.x.T
    if cfg.debias:
        X = np.stack([np.real(debias(Fk[:, q], B, X[q], L, cfg.real_domain)) for q in range(Q)])
    return np.real(X)


# ---------------------------------------------------------------------------
# LISTA
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ListaParams:
    """Per-layer threshold lam_p >= 0 and complex N x N matrices W_p, V_p."""
    lam: np.ndarray
    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.lam = np.ascontiguousarray(self.lam, dtype=np.float64)
        self.W = np.ascontiguousarray(self.W, dtype=np.complex128)
        self.V = np.ascontiguousarray(self.V, dtype=np.complex128)
        P = self.lam.shape[0]
        if self.lam.ndim != 1 or self.W.ndim != 3 or self.W.shape[0] != P or self.V.shape != self.W.shape \
                or self.W.shape[1] != self.W.shape[2]:
            raise DimensionError(f"inconsistent layer shapes: lam {self.lam.shape}, W {self.W.shape}, V {self.V.shape}")
        if np.any(self.lam < 0):
            raise ValueError("layer thresholds must be non-negative")

    @property
    def P(self) -> int:
        return self.lam.shape[0]

    @property
    def N(self) -> int:
        return self.W.shape[1]

    @property
    def degrees_of_freedom(self) -> int:
        return self.P * (2 * self.N * self.N + 1)

    def copy(self) -> "ListaParams":
        return ListaParams(self.lam.copy(), self.W.copy(), self.V.copy())

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.lam, self.W, self.V


@dataclass(eq=False)
class ListaGradients:
    lam: np.ndarray
    W: np.ndarray
    V: np.ndarray

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.lam, self.W, self.V


def init_lista_params(P: int, N: int, seed: int, init_lambda: float = 0.01) -> ListaParams:
    """W, V entries i.i.d. N(0, 1/N) in real and imaginary parts; lam_p = init_lambda."""
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(N)

    def draw():
        return rng.normal(0.0, std, (P, N, N)) + 1j * rng.normal(0.0, std, (P, N, N))

    W = draw()
    V = draw()
    return ListaParams(np.full(P, float(init_lambda)), W, V)


def ista_lista_params(B: np.ndarray, mu: float, lam_bar: float, P: int) -> ListaParams:
    """Layers that reproduce P plain ISTA iterations: W = I - B^H B/mu, V = B^H/mu, lam = lam_bar/mu."""
    N = B.shape[1]
    if B.shape[0] != N:
        raise DimensionError("ISTA-valued LISTA layers need the full N x N (masked) measurement matrix")
    W = np.eye(N) - (B.conj().T @ B) / mu
    V = B.conj().T / mu
    return ListaParams(np.full(P, lam_bar / mu), np.repeat(W[None], P, axis=0), np.repeat(V[None], P, axis=0))


def equalized_ista_params(pulse: PulseSpectrum, pattern: SamplingPattern, thresholds,
                          floor: float = 1e-3) -> ListaParams:
    """
    ISTA layers for the pulse-equalized problem, one layer per threshold:
    W = I - A^H C A / mu and V = A^H C diag(g) / mu, where C = diag(c),
    mu = ||C A||_2^2 and g = conj(h) / (|h|^2 + floor max|h|^2) is a
    regularized inverse of the pulse. With a flat pulse and floor 0 the
    layers equal ista_lista_params(B, ||B||_2^2, ., P).
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if pattern.N != pulse.N:
        raise DimensionError("pattern and pulse sizes disagree")
    if pattern.count == 0:
        raise ValueError("ISTA layers need at least one retained index")
    B = measurement_matrix(PulseSpectrum(np.ones(pulse.N)), pattern)
    mu = float(np.linalg.norm(B, 2) ** 2)
    params = ista_lista_params(B, mu, 0.0, thresholds.shape[0])
    h = pulse.samples
    mag2 = np.abs(h) ** 2
    params.V *= (h.conj() / (mag2 + floor * mag2.max()))[None, None, :]
    params.lam[:] = thresholds
    return params


def continuation_thresholds(first: float, last: float, P: int) -> np.ndarray:
    """P thresholds falling geometrically from `first` to `last`; constant `last` unless first > last > 0."""
    if P < 1:
        raise ValueError(f"need at least one layer, got P={P}")
    if not last > 0 or not first > last:
        return np.full(P, max(float(last), 0.0))
    return np.geomspace(first, last, P)


def initial_lista_params(dataset: Dataset, pattern: SamplingPattern, train_cfg: "TrainConfig", P: int,
                         seed: int = 0, scale: float = 1.0) -> ListaParams:
    """
    Starting layers for lista_train, in units where amplitudes are divided by
    `scale`. init "ista" warm-starts from equalized ISTA with thresholds
    falling from half the median first-layer peak to init_lambda; "random"
    draws N(0, 1/N) weights. An empty pattern always starts random.
    """
    N = dataset.grid.N
    if train_cfg.init == RANDOM_INIT or pattern.count == 0:
        return init_lista_params(P, N, seed, train_cfg.init_lambda)
    params = equalized_ista_params(dataset.pulse, pattern, np.zeros(P))
    F_bar, _ = dataset.measurements(pattern)
    train_idx, _ = validation_split(dataset.Q, train_cfg.validation_fraction, train_cfg.seed)
    peaks = np.max(np.abs(F_bar[train_idx] @ params.V[0].T), axis=1) / scale
    params.lam[:] = continuation_thresholds(0.5 * float(np.median(peaks)), train_cfg.init_lambda, P)
    return params


def _lista_layers(params: ListaParams, F: np.ndarray):
    """Forward pass over rows of F; returns (layer inputs, pre-activations, final iterate)."""
    Q = F.shape[0]
    x = np.zeros((Q, params.N), dtype=np.complex128)
    inputs, pre = [], []
    for p in range(params.P):
        z = x @ params.W[p].T + F @ params.V[p].T
        inputs.append(x)
        pre.append(z)
        x = soft_threshold(z, params.lam[p])
    return inputs, pre, x


def lista_forward(params: ListaParams, f_bar: np.ndarray) -> np.ndarray:
    """x^{p+1} = T_{lam_p}{W_p x^p + V_p f}, x^0 = 0; returns Re(x^P) for a vector or (Q, N) rows."""
    f_bar = np.asarray(f_bar, dtype=np.complex128)
    single = f_bar.ndim == 1
    F = f_bar[None, :] if single else f_bar
    if F.shape[1] != params.N:
        raise DimensionError(f"measurement length {F.shape[1]} does not match network size {params.N}")
    _, _, x = _lista_layers(params, F)
    out = np.real(x)
    return out[0] if single else out


def loss_and_gradients(params: ListaParams, F_bar: np.ndarray, X: np.ndarray) -> Tuple[float, ListaGradients]:
    """
    Mean over the batch of ||x_q - Re(x^P_q)||^2 and its gradients by reverse
    accumulation through the unrolled layers. The threshold kink gets subgradient 0.
    """
    F = np.atleast_2d(np.asarray(F_bar, dtype=np.complex128))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if F.shape != X.shape or F.shape[1] != params.N:
        raise DimensionError(f"batch shapes {F.shape}, {X.shape} do not match network size {params.N}")
    Q = F.shape[0]
    if Q == 0:
        raise ValueError("empty batch")
    inputs, pre, out = _lista_layers(params, F)
    resid = np.real(out) - X
    loss = float(np.sum(resid ** 2) / Q)

    g_lam = np.zeros(params.P)
    g_W = np.zeros_like(params.W)
    g_V = np.zeros_like(params.V)
    G = (2.0 / Q) * resid.astype(np.complex128)
    Fc = F.conj()
    for p in range(params.P - 1, -1, -1):
        z = pre[p]
        lam = params.lam[p]
        r = np.abs(z)
        active = r > lam
        r_safe = np.where(active, r, 1.0)
        proj = np.real(G.conj() * z)
        G_z = np.where(active, (1.0 - lam / r_safe) * G + lam * z * proj / r_safe ** 3, 0.0)
        g_lam[p] = -float(np.sum(np.where(active, proj / r_safe, 0.0)))
        g_W[p] = G_z.T @ inputs[p].conj()
        g_V[p] = G_z.T @ Fc
        G = G_z @ params.W[p].conj()
    return loss, ListaGradients(g_lam, g_W, g_V)


def lista_mse(params: ListaParams, F_bar: np.ndarray, X: np.ndarray, chunk: int = 8192) -> float:
    """Mean squared error ||x - xhat||^2 over rows, evaluated in chunks."""
    total = 0.0
    Q = F_bar.shape[0]
    for s in range(0, Q, chunk):
        est = lista_forward(params, F_bar[s:s + chunk])
        total += float(np.sum((X[s:s + chunk] - est) ** 2))
    return total / max(Q, 1)


class AdamOptimizer:
    """
    Adam over a fixed list of arrays, updated in place. Complex arrays are
    stepped through their float64 view, so real and imaginary parts keep
    separate second-moment estimates.
    """

    def __init__(self, lr: float = 1e-3, beta_1: float = 0.9, beta_2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.t = 0
        self._m = None
        self._v = None

    @staticmethod
    def _real(a: np.ndarray) -> np.ndarray:
        return a.view(np.float64) if np.iscomplexobj(a) else a

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        ws = [self._real(p) for p in params]
        gs = [self._real(np.ascontiguousarray(g)) for g in grads]
        if self._m is None:
            self._m = [np.zeros_like(w) for w in ws]
            self._v = [np.zeros_like(w) for w in ws]
        self.t += 1
        c1 = 1.0 - self.beta_1 ** self.t
        c2 = 1.0 - self.beta_2 ** self.t
        for w, g, m, v in zip(ws, gs, self._m, self._v):
            m *= self.beta_1
            m += (1.0 - self.beta_1) * g
            v *= self.beta_2
            v += (1.0 - self.beta_2) * g * g
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    validation_fraction: float = 0.1
    init_lambda: float = 0.01
    init: str = ISTA_INIT
    lr_schedule: str = COSINE
    min_lr_ratio: float = 0.01

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.init not in (ISTA_INIT, RANDOM_INIT):
            raise ValueError(f"init must be {ISTA_INIT!r} or {RANDOM_INIT!r}, got {self.init!r}")
        if self.lr_schedule not in (COSINE, CONSTANT):
            raise ValueError(f"lr_schedule must be {COSINE!r} or {CONSTANT!r}, got {self.lr_schedule!r}")
        if not (0.0 < self.min_lr_ratio <= 1.0):
            raise ValueError(f"min_lr_ratio must lie in (0, 1], got {self.min_lr_ratio!r}")
        if self.init_lambda < 0:
            raise ValueError(f"init_lambda must be non-negative, got {self.init_lambda!r}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ValueError(f"{name} must lie in [0, 1), got {b!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be at least 1")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction!r}")


@dataclass
class TrainingLog:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    wall_seconds: float = 0.0


def validation_split(Q: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded (train, validation) row split; validation is empty only when Q < 2 or fraction is 0."""
    perm = np.random.default_rng([int(seed), 0x5EED]).permutation(Q)
    if Q < 2 or fraction <= 0:
        return np.arange(Q), np.arange(0)
    n_val = min(max(int(round(Q * fraction)), 1), Q - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def validation_rows(Q: int, train_cfg: TrainConfig) -> np.ndarray:
    """Rows lista_train scores candidates on (all rows when the split leaves none out)."""
    train_idx, val_idx = validation_split(Q, train_cfg.validation_fraction, train_cfg.seed)
    return val_idx if val_idx.size else train_idx


def training_scale(X: np.ndarray) -> float:
    """sqrt(mean_q ||x_q||^2); 1 for an all-zero or empty target set."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return 1.0
    s = math.sqrt(float(np.mean(np.sum(X ** 2, axis=1))))
    return s if s > 0 and math.isfinite(s) else 1.0


def rescale_thresholds(params: ListaParams, factor: float) -> ListaParams:
    """
    Copy of params with every threshold multiplied by factor. Soft thresholding
    is positively homogeneous, so the copy maps factor*f to factor*xhat(f).
    """
    return ListaParams(params.lam * float(factor), params.W.copy(), params.V.copy())


def learning_rate_at(train_cfg: TrainConfig, epoch: int) -> float:
    """Adam step size for an epoch: constant, or cosine decay to min_lr_ratio * lr at the last epoch."""
    lr = train_cfg.learning_rate
    if train_cfg.lr_schedule == CONSTANT or train_cfg.max_epochs == 1:
        return lr
    progress = min(epoch / (train_cfg.max_epochs - 1), 1.0)
    r = train_cfg.min_lr_ratio
    return lr * (r + (1.0 - r) * 0.5 * (1.0 + math.cos(math.pi * progress)))


def lista_train(dataset: Dataset, pattern: SamplingPattern, train_cfg: TrainConfig, P: int = 10,
                init_seed: int = 0, shuffle_seed: Optional[int] = None,
                init_params: Optional[ListaParams] = None) -> Tuple[ListaParams, TrainingLog]:
    """
    Train LISTA on the masked measurements of `dataset` by mini-batch Adam.
    The pulse only shapes the starting layers (see initial_lista_params);
    training itself learns from (measurement, x) pairs. Adam runs on
    amplitudes and measurements divided by the RMS training-target norm,
    which leaves W and V unchanged and rescales the thresholds, so lam moves
    in units of the signal. Losses in the log are in the dataset's own units.
    Returns the best-validation parameters and the training log.
    """
    if dataset.Q == 0:
        raise ValueError("cannot train on an empty dataset")
    started = time.time()
    F_bar, _ = dataset.measurements(pattern)
    X = dataset.amplitudes
    train_idx, _ = validation_split(dataset.Q, train_cfg.validation_fraction, train_cfg.seed)
    val_idx = validation_rows(dataset.Q, train_cfg)
    F_val, X_val = F_bar[val_idx], X[val_idx]
    scale = training_scale(X[train_idx])
    F_unit, X_unit = F_bar / scale, X / scale

    if init_params is not None:
        params = rescale_thresholds(init_params, 1.0 / scale)
    else:
        params = initial_lista_params(dataset, pattern, train_cfg, P, init_seed, scale)
    opt = AdamOptimizer(train_cfg.learning_rate, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps)
    rng = np.random.default_rng([train_cfg.seed if shuffle_seed is None else int(shuffle_seed), 1])
    log = TrainingLog()
    best = rescale_thresholds(params, scale)
    stale = 0
    for epoch in range(train_cfg.max_epochs):
        opt.lr = learning_rate_at(train_cfg, epoch)
        order = rng.permutation(train_idx)
        total = 0.0
        for s in range(0, order.size, train_cfg.batch_size):
            rows = order[s:s + train_cfg.batch_size]
            loss, grads = loss_and_gradients(params, F_unit[rows], X_unit[rows])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            opt.step(params.arrays(), grads.arrays())
            np.maximum(params.lam, 0.0, out=params.lam)
            total += loss * rows.size
        log.train_loss.append(total / order.size * scale ** 2)
        current = rescale_thresholds(params, scale)
        val = lista_mse(current, F_val, X_val)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        log.val_loss.append(val)
        logger.debug("epoch %d lr=%.3g train=%.6g val=%.6g", epoch, opt.lr, log.train_loss[-1], val)
        if val < log.best_val:
            log.best_val, log.best_epoch = val, epoch
            best = current
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    log.wall_seconds = time.time() - started
    logger.info("LISTA |K|=%d P=%d: best val %.6g at epoch %d (%d epochs, %.1fs)",
                pattern.count, params.P, log.best_val, log.best_epoch, len(log.val_loss), log.wall_seconds)
    return best, log
