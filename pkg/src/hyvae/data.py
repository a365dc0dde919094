"""Data pipeline: CSV ingestion, Min-Max scaling, splits, sliding windows.

A univariate series is split chronologically 80/10/10, scaled by the
*training segment's* range only (test values may leave [0, 1]; that is
expected, not an error), and cut into stride-1 samples of m observed
values plus n targets. Synthetic generators provide deterministic
fixtures for tests and examples.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Rng


class DataError(ValueError):
    """Base class for ingestion/preparation failures (CLI exit code 2)."""


class ParseError(DataError):
    """A CSV cell failed to parse; the message names the 1-based line."""


class DegenerateRangeError(DataError):
    """Normalization range collapsed (constant training segment)."""


class SeriesTooShortError(DataError):
    """A series or split segment is too short for the requested windows."""


@dataclass(frozen=True)
class RawSeries:
    """An ordered univariate series plus where it came from."""

    values: np.ndarray
    source_name: str = "<memory>"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DataError(
                f"{self.source_name}: series must be a non-empty 1-d sequence")
        if not np.isfinite(values).all():
            raise DataError(f"{self.source_name}: series contains non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Normalizer:
    """Min-Max scaler: s' = (s − min) / (max − min)."""

    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateRangeError(
                f"cannot normalize a constant range [min=max={self.min}]")

    @classmethod
    def fit(cls, values) -> "Normalizer":
        values = np.asarray(values, dtype=np.float64)
        return cls(min=float(values.min()), max=float(values.max()))


def normalize(values, normalizer: Normalizer) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return (values - normalizer.min) / (normalizer.max - normalizer.min)


def denormalize(values, normalizer: Normalizer) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values * (normalizer.max - normalizer.min) + normalizer.min


def load_csv(path, column: int = 0, has_header: bool = False) -> RawSeries:
    """Read one numeric column from a CSV file into a RawSeries.

    Blank lines are skipped; parsing uses the "." decimal point
    regardless of locale. Cell failures report their 1-based line number.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    values = []
    for lineno, line in enumerate(lines, start=1):
        if lineno == 1 and has_header:
            continue
        if not line.strip():
            continue
        cells = line.rstrip("\n").split(",")
        if column >= len(cells):
            raise ParseError(
                f"{path}: line {lineno}: no column {column} "
                f"(row has {len(cells)} cells)")
        cell = cells[column].strip()
        try:
            values.append(float(cell))
        except ValueError:
            raise ParseError(
                f"{path}: line {lineno}: cannot parse {cell!r} as a number"
            ) from None
    if not values:
        raise DataError(f"{path}: no data rows found")
    return RawSeries(np.asarray(values), source_name=str(path))


def split_chronological(series: RawSeries, ratios=(0.8, 0.1, 0.1),
                        min_length: int | None = None):
    """Contiguous train/validation/test segments, sized floor/floor/rest.

    With `min_length` set (typically m + n), segments that cannot hold a
    single sample are rejected up front.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError(f"split ratios must be three values summing to 1, got {ratios}")
    total = len(series)
    n_train = int(ratios[0] * total)
    n_valid = int(ratios[1] * total)
    n_test = total - n_train - n_valid
    bounds = (
        ("train", 0, n_train),
        ("validation", n_train, n_train + n_valid),
        ("test", n_train + n_valid, total),
    )
    segments = []
    for name, lo, hi in bounds:
        if min_length is not None and hi - lo < min_length:
            raise SeriesTooShortError(
                f"{series.source_name}: {name} segment has {hi - lo} values; "
                f"need at least {min_length}")
        if hi - lo <= 0:
            raise SeriesTooShortError(
                f"{series.source_name}: {name} segment is empty "
                f"(series length {total})")
        segments.append(
            RawSeries(series.values[lo:hi], source_name=f"{series.source_name}[{name}]"))
    return tuple(segments)


@dataclass(frozen=True)
class WindowedDataset:
    """Stride-1 forecasting samples from one chronological segment.

    windows[k] holds values[k … k+m−1] and targets[k] the following n
    values; both are stored normalized when a normalizer is attached.
    `values` keeps the contiguous segment the windows were cut from, for
    consumers that need the series itself (baselines, plotting).
    """

    split: str
    windows: np.ndarray          # [count, m]
    targets: np.ndarray          # [count, n]
    normalizer: Normalizer | None = None
    values: np.ndarray | None = None

    def __len__(self):
        return self.windows.shape[0]

    @property
    def samples(self):
        return list(zip(self.windows, self.targets))


def make_windows(values, m: int, n: int, split: str = "train",
                 normalizer: Normalizer | None = None) -> WindowedDataset:
    """All (window, target) samples of a segment, stride 1 in time order."""
    values = values.values if isinstance(values, RawSeries) else np.asarray(
        values, dtype=np.float64)
    count = values.size - m - n + 1
    if count < 1:
        raise SeriesTooShortError(
            f"{split} segment of length {values.size} cannot yield a single "
            f"sample with m={m}, n={n}")
    windows = np.empty((count, m))
    targets = np.empty((count, n))
    for k in range(count):
        windows[k] = values[k:k + m]
        targets[k] = values[k + m:k + m + n]
    return WindowedDataset(split=split, windows=windows, targets=targets,
                           normalizer=normalizer, values=values)


@dataclass(frozen=True)
class DataSplits:
    """The full prepared pipeline: three windowed splits + the scaler."""

    train: WindowedDataset
    valid: WindowedDataset
    test: WindowedDataset
    normalizer: Normalizer

    @property
    def m(self):
        return self.train.windows.shape[1]

    @property
    def n(self):
        return self.train.targets.shape[1]


def prepare(series: RawSeries, m: int, n: int, ratios=(0.8, 0.1, 0.1)) -> DataSplits:
    """Split chronologically, fit the scaler on train only, window all three."""
    train_seg, valid_seg, test_seg = split_chronological(
        series, ratios, min_length=m + n)
    normalizer = Normalizer.fit(train_seg.values)
    splits = {}
    for name, segment in (("train", train_seg), ("valid", valid_seg),
                          ("test", test_seg)):
        splits[name] = make_windows(
            normalize(segment.values, normalizer), m, n, split=name,
            normalizer=normalizer)
    return DataSplits(normalizer=normalizer, **splits)


def synth_series(kind: str, length: int, params: dict | None = None,
                 seed: int = 0) -> RawSeries:
    """Deterministic synthetic fixtures.

    sine:         A·sin(2π·t/P)
    trend_season: a·t + A·sin(2π·t/P) + σ·ε_t
    ar1:          s_0 = s0; s_t = ρ·s_{t−1} + σ·ε_t
    """
    if length < 1:
        raise ValueError(f"series length must be positive, got {length}")
    params = dict(params or {})
    rng = Rng(seed)
    t = np.arange(length, dtype=np.float64)

    def take(name, default):
        return float(params.pop(name, default))

    if kind == "sine":
        amplitude, period = take("A", 1.0), take("P", 25.0)
        if period <= 0:
            raise ValueError(f"sine period P must be positive, got {period}")
        values = amplitude * np.sin(2.0 * np.pi * t / period)
    elif kind == "trend_season":
        slope = take("a", 0.01)
        amplitude, period = take("A", 1.0), take("P", 25.0)
        sigma = take("sigma", 0.05)
        if period <= 0:
            raise ValueError(f"trend_season period P must be positive, got {period}")
        if sigma < 0:
            raise ValueError(f"noise level sigma must be >= 0, got {sigma}")
        values = slope * t + amplitude * np.sin(2.0 * np.pi * t / period)
        values = values + sigma * rng.normal((length,))
    elif kind == "ar1":
        rho, sigma, s0 = take("rho", 0.9), take("sigma", 0.1), take("s0", 0.0)
        if sigma < 0:
            raise ValueError(f"noise level sigma must be >= 0, got {sigma}")
        noise = sigma * rng.normal((length,)) if sigma > 0 else np.zeros(length)
        values = np.empty(length)
        values[0] = s0
        for i in range(1, length):
            values[i] = rho * values[i - 1] + noise[i]
    else:
        raise ValueError(
            f"unknown synthetic kind {kind!r}; expected sine, trend_season, or ar1")
    if params:
        raise ValueError(f"unknown parameters for {kind}: {sorted(params)}")
    return RawSeries(values, source_name=f"synth:{kind}")
