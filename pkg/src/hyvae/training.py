"""Training and evaluation: Adam, the warm-up loop, metrics, baselines.

The training loop runs shuffled mini-batches of the joint loss through
Adam with bias correction, ramps the KL weight linearly over the first
`warmup_epochs` epochs (beta = min(1, epoch/warmup)), clips gradients to
a global norm of 5.0, and snapshots the parameters whenever the mean-mode
validation forecast MSE improves; the best snapshot is what callers get
back. Everything is deterministic given (config, seed, data).

Also here: pooled MSE/MAE/MAPE metrics, multi-horizon evaluation, an
ordinary-least-squares autoregressive baseline with validation-selected
lag, and a grid search that fans (config, seed) runs across a process
pool.
"""

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DataSplits, WindowedDataset, denormalize
from .model import HyVaeConfig, HyVaeModel, make_variant
from .rng import Rng

MAPE_EPS = 1e-8
MAX_GRAD_NORM = 5.0


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss (CLI exit code 3)."""


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    """Adam accumulators; moments are keyed like the parameter mapping."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step_count: int = 0


def adam_step(state: AdamState, params: dict) -> None:
    """One bias-corrected Adam update, mutating parameter data in place."""
    state.step_count += 1
    correct1 = 1.0 - state.beta1 ** state.step_count
    correct2 = 1.0 - state.beta2 ** state.step_count
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = state.first.setdefault(name, np.zeros_like(p.data))
        v = state.second.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correct1
        v_hat = v / correct2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_gradients(params, max_norm: float = MAX_GRAD_NORM) -> float:
    """Scale all gradients so their global norm is ≤ max_norm.

    Returns the pre-clip global norm (callers log when it exceeded).
    """
    total = 0.0
    tensors = [p for p in params if p.grad is not None]
    for p in tensors:
        total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in tensors:
            p.grad = p.grad * scale
    return norm


# -- metrics --------------------------------------------------------------

@dataclass(frozen=True)
class MetricSet:
    """Pooled forecast-error summaries (all ≥ 0 and finite)."""

    mse: float
    mae: float
    mape: float


def metrics(y, y_hat) -> MetricSet:
    """MSE, MAE, and guarded MAPE pooled over every step of every sample.

    MAPE divides by max(ε, y) with ε = 1e-8 so zero targets stay legal.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(
            f"metric operands disagree: {list(y.shape)} vs {list(y_hat.shape)}")
    if y.size == 0:
        raise ValueError("cannot compute metrics of an empty prediction set")
    residual = y - y_hat
    return MetricSet(
        mse=float(np.mean(residual**2)),
        mae=float(np.mean(np.abs(residual))),
        mape=float(np.mean(np.abs(residual / np.maximum(MAPE_EPS, y)))),
    )


# -- training loop --------------------------------------------------------

@dataclass(frozen=True)
class EpochStats:
    """One epoch's aggregates (losses are per-sample means)."""

    epoch: int
    train_loss: float
    recon: float
    kl_ladder: float
    kl_temporal: float
    beta: float
    val_mse: float
    clipped_batches: int


@dataclass
class TrainReport:
    """Epoch history plus which epoch's snapshot was returned."""

    epochs: list
    best_epoch: int
    best_val_mse: float
    wall_time_s: float


def warmup_beta(epoch: int, warmup_epochs: int) -> float:
    """Linear KL ramp: min(1, epoch/warmup); 1 when no warm-up requested."""
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, epoch / warmup_epochs)


def validation_mse(model: HyVaeModel, dataset: WindowedDataset) -> float:
    """Mean-mode forecast MSE over a whole split, batched in one pass."""
    preds = model.forecast(dataset.windows.T, mode="mean").data
    return metrics(dataset.targets, preds.T).mse


def train(model: HyVaeModel, splits: DataSplits, epochs: int = 100,
          batch_size: int = 64, lr: float = 0.01, rng=None,
          max_grad_norm: float = MAX_GRAD_NORM, on_epoch=None):
    """Optimize `model` on `splits`; returns (model, TrainReport).

    The model is left holding the parameters of the epoch with the lowest
    validation MSE, not the final epoch's. `on_epoch`, when given, is
    called with each EpochStats as it completes. Raises DivergenceError
    (with epoch/batch coordinates) the moment the loss stops being finite.
    """
    config = model.config
    if splits.m != config.m or splits.n != config.n:
        raise ValueError(
            f"dataset windows are (m={splits.m}, n={splits.n}) but the model "
            f"expects (m={config.m}, n={config.n})")
    count = len(splits.train)
    if count == 0:
        raise ValueError("training split has no samples")
    if epochs < 1:
        raise ValueError(f"need at least one epoch, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    rng = Rng(config.seed) if rng is None else rng

    params = model.parameters()
    state = AdamState(lr=lr)
    history = []
    best_mse = np.inf
    best_epoch = 0
    best_snapshot = None
    started = time.perf_counter()

    for epoch in range(1, epochs + 1):
        beta = warmup_beta(epoch, config.warmup_epochs)
        order = rng.permutation(count)
        loss_sum = recon_sum = kl_ladder_sum = kl_temporal_sum = 0.0
        clipped = 0
        for lo in range(0, count, batch_size):
            idx = order[lo:lo + batch_size]
            loss_t, breakdown = model.loss(
                splits.train.windows[idx].T, splits.train.targets[idx].T,
                rng, beta)
            value = loss_t.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at epoch {epoch}, "
                    f"batch {lo // batch_size + 1} (lr={lr}, beta={beta:.3f})")
            model.zero_grad()
            loss_t.backward()
            if clip_gradients(params.values(), max_grad_norm) > max_grad_norm:
                clipped += 1
            adam_step(state, params)
            weight = len(idx)
            loss_sum += value * weight
            recon_sum += breakdown.recon.item() * weight
            kl_ladder_sum += breakdown.kl_ladder.item() * weight
            kl_temporal_sum += breakdown.kl_temporal.item() * weight
        val_mse = validation_mse(model, splits.valid)
        if not np.isfinite(val_mse):
            raise DivergenceError(
                f"non-finite validation MSE {val_mse} after epoch {epoch} "
                f"(lr={lr}, beta={beta:.3f})")
        stats = EpochStats(
            epoch=epoch,
            train_loss=loss_sum / count,
            recon=recon_sum / count,
            kl_ladder=kl_ladder_sum / count,
            kl_temporal=kl_temporal_sum / count,
            beta=beta,
            val_mse=val_mse,
            clipped_batches=clipped,
        )
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if val_mse < best_mse:
            best_mse = val_mse
            best_epoch = epoch
            best_snapshot = {name: p.data.copy() for name, p in params.items()}

    for name, p in params.items():
        p.data = best_snapshot[name]
    report = TrainReport(
        epochs=history,
        best_epoch=best_epoch,
        best_val_mse=best_mse,
        wall_time_s=time.perf_counter() - started,
    )
    return model, report


# -- evaluation -------------------------------------------------------------

@dataclass
class ForecastReport:
    """Per-horizon pooled metrics plus the raw (normalized) pairs."""

    horizons: dict                  # horizon -> MetricSet over steps 1..h
    predictions: np.ndarray         # [count, n]
    truths: np.ndarray              # [count, n]
    normalizer: object = None

    def denormalized(self):
        """(predictions, truths) mapped back to original units."""
        if self.normalizer is None:
            raise ValueError("report carries no normalizer")
        return (denormalize(self.predictions, self.normalizer),
                denormalize(self.truths, self.normalizer))


def evaluate(model: HyVaeModel, dataset: WindowedDataset, horizons) -> ForecastReport:
    """Mean-mode forecasts for a whole split, scored at each horizon.

    A horizon h pools forecast steps 1..h (an h-step-ahead task); every
    requested horizon must fit within the model's trained horizon n.
    """
    horizons = list(horizons)
    if not horizons:
        raise ValueError("no horizons requested")
    n = model.config.n
    for h in horizons:
        if not 1 <= h <= n:
            raise ValueError(
                f"horizon {h} outside this model's range 1..{n}")
    preds = model.forecast(dataset.windows.T, mode="mean").data.T
    table = {h: metrics(dataset.targets[:, :h], preds[:, :h]) for h in horizons}
    return ForecastReport(
        horizons=table, predictions=preds, truths=dataset.targets.copy(),
        normalizer=dataset.normalizer)


# -- autoregressive baseline ---------------------------------------------------

@dataclass(frozen=True)
class ArBaselineResult:
    lag: int
    coefficients: np.ndarray        # [lag coefficients ..., intercept]
    metrics: MetricSet
    validation_mse: dict            # lag -> validation MSE


def _fit_ar(values: np.ndarray, lag: int) -> np.ndarray:
    """OLS fit of v[t] ≈ Σ_i coef[i]·v[t−1−i] + intercept (min-norm lstsq)."""
    rows = values.size - lag
    design = np.empty((rows, lag + 1))
    for i in range(lag):
        design[:, i] = values[lag - 1 - i:values.size - 1 - i]
    design[:, lag] = 1.0
    target = values[lag:]
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef


def _ar_forecast(coef: np.ndarray, windows: np.ndarray, steps: int) -> np.ndarray:
    """Recursive multi-step prediction for each window row."""
    lag = coef.size - 1
    recent = windows[:, -lag:].copy()         # [count, lag], oldest first
    out = np.empty((windows.shape[0], steps))
    for step in range(steps):
        pred = recent[:, ::-1] @ coef[:lag] + coef[lag]
        out[:, step] = pred
        recent = np.hstack([recent[:, 1:], pred.reshape(-1, 1)])
    return out


AR_TIE_ATOL = 1e-12
AR_TIE_RTOL = 1e-9


def ar_baseline(splits: DataSplits, max_lag: int = 10) -> ArBaselineResult:
    """Least-squares AR with the lag (1..max_lag) of lowest validation MSE.

    Fit on the normalized training segment; selection and test scoring use
    the same recursive n-step task the model is scored on. Lags whose
    validation MSE ties the minimum within numerical tolerance count as
    equal, and the smallest such lag wins (parsimony — on a noiseless
    series every sufficient lag scores ~0 and only rounding separates
    them). Degenerate designs fall back to the minimum-norm solution
    (which is what lstsq computes).
    """
    train_values = splits.train.values
    if train_values is None:
        raise ValueError("splits carry no raw segment values")
    if train_values.size <= max_lag:
        raise ValueError(
            f"training split has {train_values.size} values; need more "
            f"than max_lag={max_lag}")
    n = splits.n
    max_lag = min(max_lag, splits.m)    # a window only exposes m past values
    val_mse = {}
    fits = {}
    for lag in range(1, max_lag + 1):
        coef = _fit_ar(train_values, lag)
        fits[lag] = coef
        preds = _ar_forecast(coef, splits.valid.windows, n)
        val_mse[lag] = metrics(splits.valid.targets, preds).mse
    floor = min(val_mse.values())
    cutoff = floor + AR_TIE_ATOL + AR_TIE_RTOL * floor
    best_lag = min(lag for lag, mse in val_mse.items() if mse <= cutoff)
    coef = fits[best_lag]
    test_preds = _ar_forecast(coef, splits.test.windows, n)
    return ArBaselineResult(
        lag=best_lag,
        coefficients=coef,
        metrics=metrics(splits.test.targets, test_preds),
        validation_mse=val_mse,
    )


# -- grid search ------------------------------------------------------------

DEFAULT_GRID = {
    "L": [2, 4, 6, 8, 10],
    "l": [10, 20, 30, 40],
    "d": [8, 16, 32, 64, 128],
    "batch_size": [32, 64, 128],
    "lr": [0.001, 0.01, 0.1],
}

GRID_KEYS = tuple(DEFAULT_GRID)


@dataclass(frozen=True)
class GridRow:
    params: dict
    mean_val_mse: float
    mean_test: MetricSet
    seed_val_mse: dict              # seed -> validation MSE


@dataclass
class GridSearchResult:
    rows: list                      # GridRow, best first
    skipped: list                   # (params, reason)

    @property
    def best(self) -> GridRow:
        return self.rows[0]


def expand_grid(grid: dict) -> list:
    """Cartesian product of per-key candidate lists, in stable order."""
    if not grid:
        raise ValueError("empty grid")
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    keys = [k for k in GRID_KEYS if k in grid]
    combos = itertools.product(*(list(grid[k]) for k in keys))
    return [dict(zip(keys, combo)) for combo in combos]


def _run_grid_cell(splits, params, seed, m, n, warmup_epochs, epochs):
    config = HyVaeConfig(
        l=params["l"], L=params["L"], d_z=params["d"], d_h=params["d"],
        n=n, m=m, warmup_epochs=warmup_epochs, seed=seed)
    model = HyVaeModel(config)
    model, report = train(
        model, splits, epochs=epochs, batch_size=params["batch_size"],
        lr=params["lr"], rng=Rng(seed))
    test = evaluate(model, splits.test, horizons=[n]).horizons[n]
    return report.best_val_mse, test


def _grid_worker(task):
    splits, index, params, seed, m, n, warmup_epochs, epochs = task
    val, test = _run_grid_cell(splits, params, seed, m, n, warmup_epochs, epochs)
    return index, seed, val, test


def grid_search(splits: DataSplits, grid: dict = None, seeds=(0,),
                epochs: int = 100, warmup_epochs: int = 30,
                parallelism: int = 1) -> GridSearchResult:
    """Train every grid cell over every seed; rank by mean validation MSE.

    Infeasible combinations (l > m) are skipped with a reason instead of
    failing the whole search. Ties in the ranking break toward smaller
    (d, L, l) — the more parsimonious model. Deterministic given
    (grid, seeds, data); `parallelism` > 1 fans cells across processes.
    """
    grid = dict(DEFAULT_GRID) if grid is None else grid
    candidates = expand_grid(grid)
    if not seeds:
        raise ValueError("need at least one seed")
    m, n = splits.m, splits.n

    runnable = []
    skipped = []
    for params in candidates:
        full = {"batch_size": 64, "lr": 0.01, "d": 32, "L": 4, "l": 10}
        full.update(params)
        if full["l"] > m:
            skipped.append((full, f"l={full['l']} exceeds window length m={m}"))
        else:
            runnable.append(full)

    tasks = [
        (splits, index, params, seed, m, n, warmup_epochs, epochs)
        for index, params in enumerate(runnable)
        for seed in seeds
    ]
    if parallelism > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_grid_worker, tasks, chunksize=1))
    else:
        outcomes = [_grid_worker(task) for task in tasks]

    by_config = {}
    for index, seed, val, test in outcomes:
        by_config.setdefault(index, []).append((seed, val, test))
    rows = []
    for index, cell in sorted(by_config.items()):
        params = runnable[index]
        vals = [v for _, v, _ in cell]
        rows.append(GridRow(
            params=params,
            mean_val_mse=float(np.mean(vals)),
            mean_test=MetricSet(
                mse=float(np.mean([t.mse for _, _, t in cell])),
                mae=float(np.mean([t.mae for _, _, t in cell])),
                mape=float(np.mean([t.mape for _, _, t in cell])),
            ),
            seed_val_mse={s: v for s, v, _ in cell},
        ))
    rows.sort(key=lambda r: (r.mean_val_mse, r.params["d"], r.params["L"],
                             r.params["l"]))
    if not rows:
        raise ValueError("no feasible grid cells to run")
    return GridSearchResult(rows=rows, skipped=skipped)


# -- ablations ------------------------------------------------------------

def run_ablation(splits: DataSplits, config: HyVaeConfig, seeds=(0,),
                 epochs: int = 100, batch_size: int = 64, lr: float = 0.01,
                 variants=("full", "no_subseq", "no_entire")):
    """Train every variant across seeds; mean test metrics per variant.

    Returns a dict variant -> {"mse": ..., "mae": ..., "mape": ...} of
    seed-averaged test metrics at the full horizon.
    """
    table = {}
    for kind in variants:
        per_seed = []
        for seed in seeds:
            cfg = HyVaeConfig(**{**config.to_dict(), "seed": seed})
            model = make_variant(cfg, kind)
            model, _ = train(model, splits, epochs=epochs,
                             batch_size=batch_size, lr=lr, rng=Rng(seed))
            per_seed.append(
                evaluate(model, splits.test, horizons=[splits.n])
                .horizons[splits.n])
        table[kind] = {
            "mse": float(np.mean([t.mse for t in per_seed])),
            "mae": float(np.mean([t.mae for t in per_seed])),
            "mape": float(np.mean([t.mape for t in per_seed])),
        }
    return table
