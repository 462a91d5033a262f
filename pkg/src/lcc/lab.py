"""Stylized training dynamics and checkpoint-method experiments.

The model of training is a contraction toward an optimum plus noise whose
scale tracks the remaining distance:

    x_{t+1} = eta * x_t + z_t,        ||z_t|| <= ||x_t||

with x the state expressed relative to the optimum. Around it this module
builds: compression-loss perturbations injected into the dynamics, rework
cost measurements against TOPN and rotating-partition baselines, the
per-exponent-bucket ablation, and a coupled-chain dominance probe. Every
experiment is deterministic given its seed; trials use seed + trial_index.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .expquant import dequantize, promote, quantize, unbiased_exponents
from .huffman import CodeTableCache
from .rd import RDConfig, rd_quantize
from .state import DeltaVector, ModelState
from .store import QUANT_EXP, QUANT_RD, serialize_chunk

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class NoiseModel:
    """Noise family and scale c; the draw has std c * ||x|| (capped at ||x||)."""

    family: str = "gaussian"  # "gaussian" | "ball"
    scale: float = 0.0

    def __post_init__(self) -> None:
        if self.family not in ("gaussian", "ball"):
            raise DomainError(f"unknown noise family {self.family!r}")
        if self.scale < 0:
            raise DomainError("noise scale must be nonnegative")


@dataclass(frozen=True)
class SimConfig:
    """Contraction dynamics parameters."""

    dim: int = 16
    eta: float = 0.9
    steps: int = 200
    initial_distance: float = 1.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.eta < 1:
            raise DomainError("eta must lie strictly between 0 and 1")
        if self.dim < 1 or self.steps < 1:
            raise DomainError("dim and steps must be at least 1")
        if self.initial_distance <= 0:
            raise DomainError("initial distance must be positive")


@dataclass
class Trajectory:
    """Distance-to-optimum trace; truncated early when divergence triggers."""

    distances: np.ndarray
    diverged: bool
    final: np.ndarray
    states: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive compression-loss term f(delta) injected into the dynamics.

    kinds: none | topk_keep | randomized_rounding | zero_mean_noise |
    lc_codec | rd_codec. zero_mean_noise keeps its variance strictly below
    the step-noise variance (ratio < 1), the regime in which convergence
    quality is expected to survive.
    """

    kind: str = "none"
    keep: int = 0
    levels: int = 0
    variance_ratio: float = 0.0
    bits: int = 0
    lam: float = 0.0
    k_max: int = 0

    def __post_init__(self) -> None:
        kinds = (
            "none",
            "topk_keep",
            "randomized_rounding",
            "zero_mean_noise",
            "lc_codec",
            "rd_codec",
        )
        if self.kind not in kinds:
            raise DomainError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "zero_mean_noise" and not 0 <= self.variance_ratio < 1:
            raise DomainError("variance ratio must lie in [0, 1)")
        if self.kind == "topk_keep" and self.keep < 1:
            raise DomainError("topk_keep needs keep >= 1")
        if self.kind == "randomized_rounding" and self.levels < 2:
            raise DomainError("randomized rounding needs at least 2 levels")
        if self.kind == "lc_codec" and self.bits < 1:
            raise DomainError("lc_codec needs at least 1 promotion bit")
        if self.kind == "rd_codec" and self.k_max < 1:
            raise DomainError("rd_codec needs k_max >= 1")

    @staticmethod
    def none() -> "PerturbationSpec":
        return PerturbationSpec()

    @staticmethod
    def topk(keep: int) -> "PerturbationSpec":
        return PerturbationSpec(kind="topk_keep", keep=keep)

    @staticmethod
    def rounding(levels: int) -> "PerturbationSpec":
        return PerturbationSpec(kind="randomized_rounding", levels=levels)

    @staticmethod
    def noise(variance_ratio: float) -> "PerturbationSpec":
        return PerturbationSpec(kind="zero_mean_noise", variance_ratio=variance_ratio)

    @staticmethod
    def lc(bits: int) -> "PerturbationSpec":
        return PerturbationSpec(kind="lc_codec", bits=bits)

    @staticmethod
    def rd(lam: float, k_max: int) -> "PerturbationSpec":
        return PerturbationSpec(kind="rd_codec", lam=lam, k_max=k_max)

    def apply(
        self, delta: np.ndarray, rng: np.random.Generator, eps_std: float
    ) -> np.ndarray:
        """Loss term f(delta) for one step, in float64."""
        if self.kind == "none":
            return np.zeros_like(delta)
        if self.kind == "zero_mean_noise":
            std = math.sqrt(self.variance_ratio) * eps_std
            return rng.normal(0.0, std, size=delta.size) if std > 0 else np.zeros_like(delta)
        if self.kind == "topk_keep":
            kept = np.zeros_like(delta)
            if self.keep >= delta.size:
                return kept
            top = np.argpartition(np.abs(delta), delta.size - self.keep)[
                delta.size - self.keep :
            ]
            kept[top] = delta[top]
            return kept - delta
        if self.kind == "randomized_rounding":
            lo, hi = float(delta.min()), float(delta.max())
            if hi == lo:
                return np.zeros_like(delta)
            step = (hi - lo) / (self.levels - 1)
            pos = (delta - lo) / step
            base = np.floor(pos)
            frac = pos - base
            up = rng.random(delta.size) < frac
            rounded = lo + (base + up) * step
            return rounded - delta
        # codec kinds measure the loss of the float32 codec on this delta
        d32 = delta.astype(np.float32)
        if self.kind == "lc_codec":
            q = promote(quantize(DeltaVector(d32)), self.bits)
        else:
            q = rd_quantize(DeltaVector(d32), RDConfig(k_max=self.k_max, lam=self.lam))
        approx = dequantize(q).values.astype(np.float64)
        return approx - delta


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _draw_noise(
    rng: np.random.Generator, model: NoiseModel, dim: int, norm_x: float
) -> np.ndarray:
    if model.scale == 0 or norm_x == 0:
        return np.zeros(dim)
    if model.family == "gaussian":
        z = rng.standard_normal(dim) * (model.scale * norm_x / math.sqrt(dim))
    else:  # uniform in the ball of radius scale * ||x||
        direction = _unit_vector(rng, dim)
        radius = model.scale * norm_x * rng.random() ** (1.0 / dim)
        z = direction * radius
    nz = float(np.linalg.norm(z))
    if nz > norm_x:  # the noise contract: ||z|| <= ||x||
        z *= norm_x / nz
    return z


def simulate(
    cfg: SimConfig,
    perturbation: Optional[PerturbationSpec] = None,
    *,
    record_states: bool = False,
) -> Trajectory:
    """Iterate the contraction dynamics with an optional loss term.

    Divergence (distance above 1e6 times the initial distance) stops the
    run and is reported in the trajectory, not raised.
    """
    p = perturbation or PerturbationSpec.none()
    rng = np.random.default_rng(cfg.seed)
    x = cfg.initial_distance * _unit_vector(rng, cfg.dim)
    distances = [float(np.linalg.norm(x))]
    states = [x.copy()] if record_states else None
    diverged = False
    for _ in range(cfg.steps):
        norm_x = float(np.linalg.norm(x))
        eps_std = cfg.noise.scale * norm_x / math.sqrt(cfg.dim)
        z = _draw_noise(rng, cfg.noise, cfg.dim, norm_x)
        clean = cfg.eta * x + z
        if p.kind == "none":
            x = clean
        else:
            delta = clean - x
            x = clean + p.apply(delta, rng, eps_std)
        d = float(np.linalg.norm(x))
        distances.append(d)
        if record_states:
            states.append(x.copy())
        if d > DIVERGENCE_FACTOR * cfg.initial_distance:
            diverged = True
            break
    return Trajectory(
        np.asarray(distances),
        diverged,
        x,
        np.asarray(states) if record_states else None,
    )


def rate_exponent(distances: np.ndarray, burn: int = 0) -> float:
    """Least-squares slope of log distance per step (negative = converging)."""
    d = np.asarray(distances, dtype=np.float64)[burn:]
    d = d[d > 0]
    if d.size < 2:
        raise DomainError("not enough positive distances to fit a rate")
    t = np.arange(d.size)
    slope = np.polyfit(t, np.log(d), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# checkpoint-method baselines
# ---------------------------------------------------------------------------


def topn_baseline(delta: DeltaVector, budget_ratio: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Largest-|delta| entries fitting a CSR byte budget.

    Returns (indices, values, bytes). CSR for one row costs 4 bytes per
    value, 4 per column index, plus an 8-byte row pointer.
    """
    if not 0 < budget_ratio <= 1:
        raise DomainError("budget ratio must lie in (0, 1]")
    n = len(delta)
    budget = budget_ratio * 4.0 * n
    m = min(n, max(0, int((budget - 8) // 8)))
    if m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32), 8
    mags = np.abs(delta.values)
    # stable sort on -|delta| resolves magnitude ties toward lower indices
    order = np.argsort(-mags, kind="stable")[:m]
    idx = np.sort(order)
    return idx, delta.values[idx], 8 * m + 8


def scar_partition(n: int, partitions: int, step: int) -> slice:
    """Rotating partition persisted at the given step (contiguous blocks)."""
    if partitions < 1:
        raise DomainError("partition count must be at least 1")
    p = step % partitions
    base = n // partitions
    extra = n % partitions
    lo = p * base + min(p, extra)
    hi = lo + base + (1 if p < extra else 0)
    return slice(lo, hi)


class _FullTracker:
    method = "full"

    def __init__(self, initial: np.ndarray, budget_ratio: float) -> None:
        self.saved = initial.copy()
        self.bytes_per_step = 4.0 * initial.size
        self.budget_met = budget_ratio >= 1.0

    def update(self, state32: np.ndarray, step: int) -> None:
        self.saved = state32.copy()

    def recover(self) -> np.ndarray:
        return self.saved.copy()


class _CodecTracker:
    """Shadow tracking through the production codec; bytes from real chunks."""

    def __init__(
        self,
        initial: np.ndarray,
        budget_ratio: float,
        *,
        bits: int = 0,
        rd_config: Optional[RDConfig] = None,
    ) -> None:
        self.method = "lc" if rd_config is None else "rd"
        self.shadow = initial.astype(np.float32).copy()
        self.bits = bits
        self.rd_config = rd_config
        self.cache = CodeTableCache()
        self.total_bytes = 0
        self.steps = 0
        self.budget = budget_ratio * 4.0 * initial.size

    def update(self, state32: np.ndarray, step: int) -> None:
        delta = DeltaVector(np.subtract(state32, self.shadow, dtype=np.float32))
        if self.rd_config is not None:
            q = rd_quantize(delta, self.rd_config)
            qid = QUANT_RD
        else:
            q = quantize(delta)
            if self.bits:
                q = promote(q, self.bits)
            qid = QUANT_EXP
        blob = serialize_chunk(q, step, qid, cache=self.cache)
        self.total_bytes += len(blob)
        self.steps += 1
        self.shadow = np.add(self.shadow, dequantize(q).values, dtype=np.float32)

    @property
    def bytes_per_step(self) -> float:
        return self.total_bytes / max(1, self.steps)

    @property
    def budget_met(self) -> bool:
        return self.bytes_per_step <= self.budget

    def recover(self) -> np.ndarray:
        return self.shadow.copy()


class _TopnTracker:
    method = "topn"

    def __init__(self, initial: np.ndarray, budget_ratio: float) -> None:
        self.shadow = initial.astype(np.float32).copy()
        self.ratio = budget_ratio
        self.bytes_per_step = 0.0
        self.budget_met = True
        self._budget = budget_ratio * 4.0 * initial.size

    def update(self, state32: np.ndarray, step: int) -> None:
        delta = DeltaVector(np.subtract(state32, self.shadow, dtype=np.float32))
        idx, vals, nbytes = topn_baseline(delta, self.ratio)
        self.bytes_per_step = float(nbytes)
        self.budget_met = nbytes <= self._budget
        shadow = self.shadow.copy()
        shadow[idx] = np.add(shadow[idx], vals, dtype=np.float32)
        self.shadow = shadow

    def recover(self) -> np.ndarray:
        return self.shadow.copy()


class _ScarTracker:
    method = "scar"

    def __init__(self, initial: np.ndarray, budget_ratio: float) -> None:
        self.saved = initial.astype(np.float32).copy()
        self.partitions = max(1, math.ceil(1.0 / budget_ratio))
        self.bytes_per_step = 4.0 * (initial.size / self.partitions)
        self.budget_met = True

    def update(self, state32: np.ndarray, step: int) -> None:
        sl = scar_partition(self.saved.size, self.partitions, step)
        self.saved[sl] = state32[sl]

    def recover(self) -> np.ndarray:
        return self.saved.copy()


def make_tracker(method: str, initial: np.ndarray, budget_ratio: float):
    if method == "full":
        return _FullTracker(initial, budget_ratio)
    if method == "lc":
        bits = 2 if budget_ratio <= 0.05 else 3
        return _CodecTracker(initial, budget_ratio, bits=bits)
    if method == "rd":
        return _CodecTracker(
            initial, budget_ratio, rd_config=RDConfig(k_max=4, lam=0.05)
        )
    if method == "topn":
        return _TopnTracker(initial, budget_ratio)
    if method == "scar":
        return _ScarTracker(initial, budget_ratio)
    raise DomainError(f"unknown checkpoint method {method!r}")


# ---------------------------------------------------------------------------
# tasks with a replayable noise stream
# ---------------------------------------------------------------------------


class QuadraticTask:
    """Contraction dynamics with pregenerated noise, loss ||x||^2.

    Coordinates carry a fixed scale profile; the default lognormal profile
    spans several decades, mirroring the per-layer spread of real models
    where a small fraction of parameters dominates the update mass. Noise
    follows the same profile so each coordinate keeps evolving at its own
    scale; the total noise norm still tracks (and is capped at) ||x||.
    """

    def __init__(
        self,
        cfg: SimConfig,
        horizon: int,
        *,
        scale_profile: str = "lognormal",
        scale_sigma: float = 2.0,
    ) -> None:
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        if scale_profile == "isotropic":
            scales = np.ones(cfg.dim)
        elif scale_profile == "lognormal":
            scales = np.exp(scale_sigma * rng.standard_normal(cfg.dim))
        else:
            raise DomainError(f"unknown scale profile {scale_profile!r}")
        self.scales = scales / np.linalg.norm(scales)
        x0 = self.scales * rng.standard_normal(cfg.dim)
        self.x0 = cfg.initial_distance * x0 / np.linalg.norm(x0)
        self.gaussians = rng.standard_normal((horizon, cfg.dim))
        self.uniforms = rng.random(horizon)
        self.horizon = horizon

    def step(self, x: np.ndarray, t: int) -> np.ndarray:
        cfg = self.cfg
        norm_x = float(np.linalg.norm(x))
        if cfg.noise.scale == 0 or norm_x == 0:
            return cfg.eta * x
        if cfg.noise.family == "gaussian":
            z = self.scales * self.gaussians[t] * (cfg.noise.scale * norm_x)
        else:
            g = self.scales * self.gaussians[t]
            direction = g / np.linalg.norm(g)
            z = direction * (
                cfg.noise.scale * norm_x * self.uniforms[t] ** (1.0 / cfg.dim)
            )
        nz = float(np.linalg.norm(z))
        if nz > norm_x:
            z *= norm_x / nz
        return cfg.eta * x + z

    def loss(self, x: np.ndarray) -> float:
        return float(np.dot(x, x))


class LogisticBlobTask:
    """Two-Gaussian-blob logistic regression trained by minibatch SGD.

    A tiny stand-in for a real training job: the parameter vector is
    checkpointable like any other state and the batch stream replays
    deterministically after recovery.
    """

    def __init__(
        self,
        seed: int = 0,
        *,
        horizon: int = 400,
        n_samples: int = 400,
        dim: int = 8,
        lr: float = 0.5,
        batch: int = 16,
    ) -> None:
        rng = np.random.default_rng(seed)
        half = n_samples // 2
        centers = rng.normal(0.0, 1.0, size=dim)
        pos = rng.normal(centers + 1.2, 1.0, size=(half, dim))
        neg = rng.normal(centers - 1.2, 1.0, size=(half, dim))
        x = np.vstack([pos, neg])
        self.features = np.hstack([x, np.ones((x.shape[0], 1))])
        self.labels = np.concatenate([np.ones(half), np.zeros(half)])
        self.lr = lr
        self.x0 = rng.normal(0.0, 0.01, size=dim + 1)
        self.batches = rng.integers(0, n_samples, size=(horizon, batch))
        self.horizon = horizon

    def step(self, w: np.ndarray, t: int) -> np.ndarray:
        rows = self.batches[t]
        xb = self.features[rows]
        yb = self.labels[rows]
        p = 1.0 / (1.0 + np.exp(-(xb @ w)))
        grad = xb.T @ (p - yb) / rows.size
        return w - self.lr * grad

    def loss(self, w: np.ndarray) -> float:
        p = 1.0 / (1.0 + np.exp(-(self.features @ w)))
        p = np.clip(p, 1e-12, 1 - 1e-12)
        y = self.labels
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# ---------------------------------------------------------------------------
# rework cost
# ---------------------------------------------------------------------------


@dataclass
class MethodResult:
    """Rework statistics for one method at one budget."""

    method: str
    budget_ratio: float
    rework: np.ndarray  # one entry per trial
    bytes_per_step: float
    size_ratio: float
    budget_met: bool
    capped_trials: int

    @property
    def mean(self) -> float:
        return float(self.rework.mean())

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.rework.std(ddof=1) / math.sqrt(self.rework.size)
        return self.mean - half, self.mean + half


@dataclass
class ReworkReport:
    results: dict[str, MethodResult]
    failure_step: int
    trials: int


def rework_trial(
    task,
    method: str,
    budget_ratio: float,
    failure_step: int,
    *,
    tol: float = 1e-3,
    max_extra: int = 2000,
) -> tuple[int, object]:
    """One failure/recovery run; returns (rework iterations, tracker)."""
    x = task.x0.astype(np.float64)
    tracker = make_tracker(method, x.astype(np.float32), budget_ratio)
    for t in range(failure_step):
        x = task.step(x, t)
        tracker.update(x.astype(np.float32), t + 1)
    pre_failure_loss = task.loss(x)
    threshold = pre_failure_loss * (1.0 + tol)
    y = tracker.recover().astype(np.float64)
    rework = max_extra
    if task.loss(y) <= threshold:
        return 0, tracker
    for r in range(1, max_extra + 1):
        y = task.step(y, failure_step - 1 + r)
        if task.loss(y) <= threshold:
            rework = r
            break
    return rework, tracker


def rework_cost(
    cfg: SimConfig,
    method: str,
    budget_ratio: float,
    failure_step: int,
    *,
    trials: int = 50,
    tol: float = 1e-3,
    max_extra: int = 2000,
    task_factory: Optional[Callable[[int, int], object]] = None,
) -> MethodResult:
    """Rework iterations over repeated seeded trials for one method."""
    if budget_ratio <= 0 or budget_ratio > 1:
        raise DomainError("budget ratio must lie in (0, 1]")
    if failure_step < 1:
        raise DomainError("failure step must be at least 1")
    horizon = failure_step + max_extra + 1
    if task_factory is None:
        task_factory = lambda seed, hor: QuadraticTask(replace(cfg, seed=seed), hor)
    rework = np.zeros(trials)
    bytes_per_step = 0.0
    budget_met = True
    full = None
    for trial in range(trials):
        task = task_factory(cfg.seed + trial, horizon)
        r, tracker = rework_trial(
            task, method, budget_ratio, failure_step, tol=tol, max_extra=max_extra
        )
        rework[trial] = r
        bytes_per_step += tracker.bytes_per_step / trials
        budget_met = budget_met and tracker.budget_met
        full = 4.0 * task.x0.size
    return MethodResult(
        method,
        budget_ratio,
        rework,
        bytes_per_step,
        bytes_per_step / full,
        budget_met,
        int((rework >= max_extra).sum()),
    )


def rework_comparison(
    cfg: SimConfig,
    methods: Sequence[str],
    budget_ratio: float,
    failure_step: int,
    *,
    trials: int = 50,
    tol: float = 1e-3,
    max_extra: int = 2000,
    task_factory: Optional[Callable[[int, int], object]] = None,
) -> ReworkReport:
    results = {
        m: rework_cost(
            cfg,
            m,
            budget_ratio,
            failure_step,
            trials=trials,
            tol=tol,
            max_extra=max_extra,
            task_factory=task_factory,
        )
        for m in methods
    }
    return ReworkReport(results, failure_step, trials)


# ---------------------------------------------------------------------------
# priority ablation
# ---------------------------------------------------------------------------


def ablation_errors(
    x_theta: np.ndarray, x_theta_m: np.ndarray
) -> list[tuple[int, float]]:
    """Relative loss error from zeroing each exponent bucket of the delta.

    The delta between the two states is classed by the exponent of its
    float32 representation; bucket i's error compares the loss reached
    with that bucket's updates suppressed against the true end loss.
    Returned as (exponent, error) sorted by exponent descending.
    """
    if x_theta.shape != x_theta_m.shape:
        raise ShapeError("states disagree on shape")
    v_gt = float(np.dot(x_theta_m, x_theta_m))
    if v_gt == 0:
        raise DomainError("degenerate loss: end state is exactly the optimum")
    delta = x_theta_m - x_theta
    exps = unbiased_exponents(delta.astype(np.float32))
    out = []
    for e in sorted(set(int(v) for v in exps), reverse=True):
        mask = exps == e
        candidate = x_theta_m - delta * mask  # bucket's updates suppressed
        loss = float(np.dot(candidate, candidate))
        out.append((e, abs(v_gt - loss) / v_gt))
    return out


def priority_ablation(
    cfg: SimConfig, theta_step: int, m: int
) -> list[tuple[int, float]]:
    """Run the dynamics and ablate the delta accumulated over m steps."""
    if m < 1:
        raise DomainError("iteration gap m must be at least 1")
    run = replace(cfg, steps=theta_step + m)
    traj = simulate(run, record_states=True)
    return ablation_errors(traj.states[theta_step], traj.states[theta_step + m])


# ---------------------------------------------------------------------------
# coupled-chain dominance probe
# ---------------------------------------------------------------------------


def coupling_probe(
    x0: np.ndarray, x0_prime: np.ndarray, cfg: SimConfig
) -> float:
    """Fraction of steps where ||x_t|| <= ||x'_t|| under coupled noise.

    Both chains share the Gaussian direction each step, scaled by their own
    norm (and capped at it). This measures the dominance conjecture; it
    asserts nothing.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    xp = np.asarray(x0_prime, dtype=np.float64).copy()
    if x.shape != xp.shape:
        raise ShapeError("chains disagree on dimension")
    if np.linalg.norm(x) > np.linalg.norm(xp):
        raise DomainError("coupling probe expects ||x0|| <= ||x0_prime||")
    rng = np.random.default_rng(cfg.seed)
    dominated = 0
    for _ in range(cfg.steps):
        g = rng.standard_normal(x.size)
        multiplier = cfg.noise.scale * g
        nm = float(np.linalg.norm(multiplier))
        if nm > 1.0:  # keep ||z|| <= ||x|| for both chains
            multiplier /= nm
        x = cfg.eta * x + float(np.linalg.norm(x)) * multiplier
        xp = cfg.eta * xp + float(np.linalg.norm(xp)) * multiplier
        if np.linalg.norm(x) <= np.linalg.norm(xp) * (1 + 1e-12):
            dominated += 1
    return dominated / cfg.steps


def coupling_report(cfg: SimConfig, dims: Sequence[int] = (1, 2, 16)) -> dict[int, float]:
    """Dominance fractions for chains started at distances 1 and 2."""
    out = {}
    for d in dims:
        sub = replace(cfg, dim=d)
        rng = np.random.default_rng(cfg.seed + d)
        direction = _unit_vector(rng, d)
        out[d] = coupling_probe(direction, 2.0 * direction, sub)
    return out
