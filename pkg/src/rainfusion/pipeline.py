"""Preprocessing: normalization, band statistics, resampling, dataset curation.

Radar rates are squashed with a log transform anchored at the 200 mm/h
ceiling; satellite bands are min-max scaled from training-split extrema and
upsampled to the radar grid with separable Lanczos-3.  Dataset curation
drops frames with >200 mm/h outliers, thins no-rain frames, and windows the
surviving timestamps into 6-input/1-target sequences per lead time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grids import (
    MISSING,
    RAIN_MAX,
    FormatError,
    IndexEntry,
    RainGrid,
    SatScene,
    grid_stats,
    minutes_to_iso,
    read_grid,
)

LOG_BASE = RAIN_MAX + 2.0  # 202: rate ceiling plus the +2 stability shift
_LN_BASE = math.log(LOG_BASE)

LEAD_MINUTES = (5, 15, 30)
# lead -> (window start, window end) offsets in minutes before the target
_LEAD_WINDOWS = {5: (30, 5), 15: (40, 15), 30: (55, 30)}
FRAME_STEP = 5  # minutes between consecutive frames
WINDOW_FRAMES = 6


@dataclass(frozen=True)
class LeadTime:
    """Forecast lead; fixes the 6-frame input window relative to target t."""

    minutes: int

    def __post_init__(self):
        if self.minutes not in _LEAD_WINDOWS:
            raise ValueError(f"lead must be one of {LEAD_MINUTES}, got {self.minutes}")

    @property
    def input_offsets(self) -> tuple[int, ...]:
        """Offsets of the 6 input frames, e.g. (-30, -25, ..., -5) for 5 min."""
        start, end = _LEAD_WINDOWS[self.minutes]
        return tuple(range(-start, -end + 1, FRAME_STEP))


@dataclass(frozen=True)
class SequenceSample:
    """Six input frames plus the target radar frame for one lead time."""

    input_timestamps: tuple[int, ...]
    radar_paths: tuple[str, ...]
    sat_paths: tuple[str, ...] | None
    target_timestamp: int
    target_path: str
    lead_minutes: int

    def __post_init__(self):
        ts = self.input_timestamps
        if len(ts) != WINDOW_FRAMES:
            raise ValueError(f"expected {WINDOW_FRAMES} input timestamps, got {len(ts)}")
        if any(b - a != FRAME_STEP for a, b in zip(ts, ts[1:])):
            raise ValueError(f"input timestamps must increase in {FRAME_STEP}-minute steps: {ts}")
        if len(self.radar_paths) != WINDOW_FRAMES:
            raise ValueError("one radar path per input timestamp required")
        if self.sat_paths is not None and len(self.sat_paths) != WINDOW_FRAMES:
            raise ValueError("one satellite path per input timestamp required")


# ---------------------------------------------------------------------------
# Radar normalization (log base 202) and its clamped inverse
# ---------------------------------------------------------------------------

def normalize_values(values: np.ndarray) -> np.ndarray:
    """log_202(x + 2) per cell; the -999 sentinel maps to exactly 0.

    Rates must not exceed 200 mm/h — run the outlier filter first.
    """
    v = np.asarray(values, dtype=np.float64)
    missing = v == MISSING
    if np.any(v[~missing] > RAIN_MAX):
        raise ValueError(f"rate above {RAIN_MAX} mm/h: outlier filtering must run first")
    if np.any(v[~missing] < 0):
        raise ValueError("negative rate other than the -999 sentinel")
    out = np.where(missing, 0.0, np.log(np.maximum(v, 0.0) + 2.0) / _LN_BASE)
    return out


def denormalize_values(values: np.ndarray) -> np.ndarray:
    """Inverse of `normalize_values` on [0, 1], clamped at 0 from below.

    The raw inverse of 0 is -1; clamping keeps outputs valid rain rates
    (missing cells are not reconstructed).
    """
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("normalized values must lie in [0, 1]")
    return np.maximum(np.power(LOG_BASE, v) - 2.0, 0.0)


def normalize_radar(grid: RainGrid) -> RainGrid:
    return RainGrid(normalize_values(grid.values), grid.timestamp)


def denormalize_radar(grid: RainGrid) -> RainGrid:
    return RainGrid(denormalize_values(grid.values), grid.timestamp)


# ---------------------------------------------------------------------------
# Satellite band statistics and min-max normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandStats:
    """Per-band min/max fitted from the training split only."""

    mins: np.ndarray  # (bands,)
    maxs: np.ndarray  # (bands,)
    count: int  # scenes the stats were fitted from

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ValueError("mins/maxs must be matching 1-D arrays")
        if np.any(mins > maxs):
            raise ValueError("band min exceeds band max")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def bands(self) -> int:
        return self.mins.shape[0]

    @property
    def constant_bands(self) -> tuple[int, ...]:
        """Indices of degenerate bands (min == max); normalized to zeros."""
        return tuple(int(i) for i in np.nonzero(self.mins == self.maxs)[0])

    def merge(self, other: "BandStats") -> "BandStats":
        if self.bands != other.bands:
            raise ValueError("cannot merge stats with different band counts")
        return BandStats(
            np.minimum(self.mins, other.mins),
            np.maximum(self.maxs, other.maxs),
            self.count + other.count,
        )


def fit_band_stats(scenes) -> BandStats:
    """Running per-band min/max over all cells of the given scenes."""
    stats = None
    for scene in scenes:
        v = scene.values
        s = BandStats(v.min(axis=(1, 2)), v.max(axis=(1, 2)), 1)
        stats = s if stats is None else stats.merge(s)
    if stats is None:
        raise ValueError("cannot fit band statistics from zero scenes")
    return stats


def normalize_satellite(scene: SatScene, stats: BandStats) -> SatScene:
    """(X - min) / (max - min) per band, clamped to [0, 1].

    Values beyond the training extrema clamp; a constant band maps to zeros.
    """
    if stats.bands != scene.values.shape[0]:
        raise ValueError(f"stats cover {stats.bands} bands, scene has {scene.values.shape[0]}")
    span = stats.maxs - stats.mins
    safe_span = np.where(span == 0, 1.0, span)
    v = (scene.values.astype(np.float64) - stats.mins[:, None, None]) / safe_span[:, None, None]
    v = np.where((span == 0)[:, None, None], 0.0, np.clip(v, 0.0, 1.0))
    return SatScene(v, scene.timestamp, scene.band_names)


# ---------------------------------------------------------------------------
# Separable Lanczos-3 resampling
# ---------------------------------------------------------------------------

def _lanczos_kernel(t: np.ndarray, a: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    pt = np.pi * t
    with np.errstate(invalid="ignore", divide="ignore"):
        k = a * np.sin(pt) * np.sin(pt / a) / (pt * pt)
    k = np.where(t == 0, 1.0, k)
    return np.where(np.abs(t) < a, k, 0.0)


def lanczos_weights(src: int, dst: int, a: int = 3) -> np.ndarray:
    """(dst, src) weight matrix: border-clamped taps, rows renormalized."""
    if src < 2:
        raise ValueError(f"source axis must have >= 2 samples, got {src}")
    if dst < 1:
        raise ValueError(f"target axis must be positive, got {dst}")
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5  # source-space centers
    base = np.floor(x).astype(int)
    w = np.zeros((dst, src))
    for off in range(-a + 1, a + 1):
        k = base + off
        taps = _lanczos_kernel(x - k, a)
        np.add.at(w, (np.arange(dst), np.clip(k, 0, src - 1)), taps)
    return w / w.sum(axis=1, keepdims=True)


def resample_lanczos(band: np.ndarray, rows: int, cols: int, a: int = 3) -> np.ndarray:
    """Separable Lanczos resampling of one 2-D band to (rows, cols).

    Tuned for upsampling (the satellite-to-radar path); the kernel is not
    rescaled for decimation.
    """
    band = np.asarray(band, dtype=np.float64)
    if band.ndim != 2 or band.shape[0] < 2 or band.shape[1] < 2:
        raise ValueError(f"source must be at least 2x2, got shape {band.shape}")
    wr = lanczos_weights(band.shape[0], rows, a)
    wc = lanczos_weights(band.shape[1], cols, a)
    return wr @ band @ wc.T


def resample_scene(scene: SatScene, rows: int, cols: int) -> SatScene:
    if (scene.rows, scene.cols) == (rows, cols):
        return scene
    out = np.stack([resample_lanczos(b, rows, cols) for b in scene.values])
    return SatScene(out, scene.timestamp, scene.band_names)


# ---------------------------------------------------------------------------
# Dataset curation: outlier filter, no-rain subsampling, sequence building
# ---------------------------------------------------------------------------

@dataclass
class OutlierReport:
    total: int
    removed: list[int] = field(default_factory=list)  # timestamps
    unreadable: list[str] = field(default_factory=list)  # paths

    @property
    def removed_fraction(self) -> float:
        return len(self.removed) / self.total if self.total else 0.0


def filter_outliers(entries, reader=read_grid) -> tuple[list[IndexEntry], OutlierReport]:
    """Drop frames whose max non-missing rate exceeds 200 mm/h.

    Unreadable radar files are recorded in the report (and excluded), never
    silently skipped.
    """
    report = OutlierReport(total=len(entries))
    kept = []
    for e in sorted(entries, key=lambda e: e.timestamp):
        try:
            grid = reader(e.radar_path)
        except (OSError, FormatError):
            report.unreadable.append(e.radar_path)
            continue
        if grid_stats(grid).max_rate > RAIN_MAX:
            report.removed.append(e.timestamp)
        else:
            kept.append(e)
    return kept, report


@dataclass
class SubsampleReport:
    no_rain_total: int
    no_rain_kept: int
    keep_fraction: float
    seed: int


def subsample_no_rain(entries, keep_fraction: float, seed: int,
                      reader=read_grid) -> tuple[list[IndexEntry], SubsampleReport]:
    """Retain no-rain frames i.i.d. with probability keep_fraction.

    Frames with any rainy cell are always kept.  Draws happen in timestamp
    order from a generator seeded once, so the outcome is reproducible.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in [0, 1], got {keep_fraction}")
    rng = np.random.default_rng(seed)
    kept = []
    total = kept_count = 0
    for e in sorted(entries, key=lambda e: e.timestamp):
        if grid_stats(reader(e.radar_path)).rainy_fraction > 0:
            kept.append(e)
            continue
        total += 1
        if rng.random() < keep_fraction:
            kept.append(e)
            kept_count += 1
    return kept, SubsampleReport(total, kept_count, keep_fraction, seed)


def build_sequences(entries, lead: LeadTime, multimodal: bool = False) -> list[SequenceSample]:
    """Window an index into 6-input/1-target samples for one lead time.

    A sample is emitted for target time t iff the radar frame exists at t
    and at all six window offsets (plus the satellite scene at each input
    time when multimodal); anything else simply yields no sample.
    """
    by_ts = {}
    for e in entries:
        if e.timestamp % FRAME_STEP != 0:
            raise ValueError(f"timestamp {e.timestamp} not on the {FRAME_STEP}-minute lattice")
        by_ts[e.timestamp] = e
    offsets = lead.input_offsets
    samples = []
    for t in sorted(by_ts):
        inputs = [by_ts.get(t + off) for off in offsets]
        if any(i is None for i in inputs):
            continue
        if multimodal and any(i.sat_path is None for i in inputs):
            continue
        samples.append(SequenceSample(
            input_timestamps=tuple(t + off for off in offsets),
            radar_paths=tuple(i.radar_path for i in inputs),
            sat_paths=tuple(i.sat_path for i in inputs) if multimodal else None,
            target_timestamp=t,
            target_path=by_ts[t].radar_path,
            lead_minutes=lead.minutes,
        ))
    return samples


# ---------------------------------------------------------------------------
# Preprocessing manifest (plain text, stable ordering)
# ---------------------------------------------------------------------------

def band_stats_lines(stats: BandStats) -> list[str]:
    lines = [f"band_stats_count={stats.count}"]
    for i in range(stats.bands):
        lines.append(f"band_min_{i}={stats.mins[i]!r}")
        lines.append(f"band_max_{i}={stats.maxs[i]!r}")
    return lines


def band_stats_from_fields(fields: dict) -> BandStats:
    n = 0
    while f"band_min_{n}" in fields:
        n += 1
    if n == 0:
        raise ValueError("manifest carries no band statistics")
    mins = np.array([float(fields[f"band_min_{i}"]) for i in range(n)])
    maxs = np.array([float(fields[f"band_max_{i}"]) for i in range(n)])
    return BandStats(mins, maxs, int(fields.get("band_stats_count", 0)))


def write_manifest(path, fields: dict) -> None:
    lines = [f"{k}={v}" for k, v in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key] = value
    return fields
