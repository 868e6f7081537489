"""Figure-style analytics: expanding-window decoding curves, coefficient
importance profiles, scalp topographies, slow-potential waveforms, and
component-space trajectories.

All file exports are deterministic: fixed float formatting, stable ordering,
no timestamps.  SVG output is plain SVG 1.1 with no external references.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp as _dsp
from .core import (
    CLASS_NAMES,
    ChannelMontage,
    Dataset,
    Phase,
    atomic_write_text,
)
from .csp import project
from .errors import ConfigError, DataError
from .features import FbcspPipeline, FeatureCache
from .ml import (
    DEFAULT_C_GRID,
    DEFAULT_FOLDS,
    FittedClassifier,
    OvrModel,
    kfold_cv,
    paired_t_test,
)

# fixed class palette for figures (diverging-safe hues)
_CLASS_COLORS = {0: "#d6604d", 1: "#4393c3", 2: "#5aae61"}
_FALLBACK_COLOR = "#888888"

MIN_WINDOW_S = 0.25


def _class_color(label: int) -> str:
    return _CLASS_COLORS.get(label, _FALLBACK_COLOR)


def _class_name(label: int) -> str:
    return CLASS_NAMES.get(label, f"class {label}")


def _fmt(v: float) -> str:
    """Shortest exact float spelling; round-trips via float()."""
    return repr(float(v))


def _require_time_locked(dataset: Dataset) -> tuple[int, int, int]:
    """All trials must share length and onsets; returns (n, planning, movement)."""
    if not dataset.trials:
        raise DataError("empty dataset")
    t0 = dataset.trials[0]
    for t in dataset.trials:
        if (
            t.n_samples != t0.n_samples
            or t.planning_onset != t0.planning_onset
            or t.movement_onset != t0.movement_onset
        ):
            raise DataError("trials are not time-locked")
    return t0.n_samples, t0.planning_onset, t0.movement_onset


# ---------------------------------------------------------------------------
# Expanding-window temporal curves
# ---------------------------------------------------------------------------


@dataclass
class TemporalCurve:
    """Cross-validated accuracy as the analysis window grows from t = 0.

    ``fold_accuracies`` has one row per endpoint (columns = folds) so the
    per-fold pairing survives for pre/post significance testing.
    """

    endpoints_s: np.ndarray
    fold_accuracies: np.ndarray
    mean_accuracies: np.ndarray
    std_accuracies: np.ndarray
    chosen_c: tuple[float, ...]
    scenario: str
    bands: tuple[str, ...]
    k: int
    seed: int

    def __post_init__(self):
        self.endpoints_s = np.asarray(self.endpoints_s, dtype=np.float64)
        if np.any(np.diff(self.endpoints_s) <= 0.0):
            raise ConfigError("curve endpoints must be strictly increasing")
        for arr in (self.fold_accuracies, self.mean_accuracies, self.std_accuracies):
            a = np.asarray(arr, dtype=np.float64)
            if np.any(a < 0.0) or np.any(a > 1.0):
                raise DataError("accuracies must lie in [0, 1]")


def _window_endpoints(n_samples: int, step_s: float, fs: float) -> list[int]:
    """Sample endpoints at multiples of the step, plus the trial end if unaligned."""
    if step_s <= 0.0:
        raise ConfigError("step must be positive")
    step_n = int(round(step_s * fs))
    min_n = int(round(MIN_WINDOW_S * fs))
    if step_n < min_n:
        raise ConfigError(
            f"first window of {step_s} s is shorter than {MIN_WINDOW_S} s; "
            "covariance estimates would be degenerate"
        )
    if n_samples < min_n:
        raise ConfigError("trial shorter than the minimum analysis window")
    ends = list(range(step_n, n_samples + 1, step_n))
    if not ends or ends[-1] != n_samples:
        ends.append(n_samples)
    return ends


def temporal_evolution(
    dataset: Dataset,
    class_a: int = 0,
    class_b: int | None = 1,
    bands=None,
    step_s: float = 0.5,
    k: int = DEFAULT_FOLDS,
    seed: int = 0,
    c_grid: tuple[float, ...] = DEFAULT_C_GRID,
    cache: FeatureCache | None = None,
) -> TemporalCurve:
    """Rerun the full CV pipeline on windows [0, t) for growing t.

    Endpoints advance in ``step_s`` increments from trial start; the final
    trial sample is always an endpoint.  Feature dimensionality is fixed by
    the band selection, and the fold assignment (seed) is shared across
    endpoints so accuracies are paired per fold.
    """
    n_samples, _, _ = _require_time_locked(dataset)
    fs = dataset.sample_rate
    bands = tuple(bands) if bands is not None else _dsp.BAND_ORDER
    ends = _window_endpoints(n_samples, step_s, fs)
    cache = cache if cache is not None else FeatureCache(dataset)
    # one filtering pass per (trial, band) covers every endpoint window
    cache.ensure_covariances(bands, [("window", 0, e) for e in ends])
    fold_rows, means, stds, cs = [], [], [], []
    scenario = ""
    canonical: tuple[str, ...] = ()
    for e in ends:
        pipeline = FbcspPipeline(
            dataset,
            bands,
            window=(0, e),
            class_a=class_a,
            class_b=class_b,
            cache=cache,
        )
        scenario = pipeline.scenario
        canonical = pipeline.bands
        report = kfold_cv(pipeline, k=k, seed=seed, c_grid=c_grid)
        fold_rows.append(report.fold_accuracies)
        means.append(report.mean_accuracy)
        stds.append(report.std_accuracy)
        cs.append(report.chosen_c)
    return TemporalCurve(
        endpoints_s=np.array(ends, dtype=np.float64) / fs,
        fold_accuracies=np.stack(fold_rows),
        mean_accuracies=np.array(means),
        std_accuracies=np.array(stds),
        chosen_c=tuple(cs),
        scenario=scenario,
        bands=canonical,
        k=k,
        seed=seed,
    )


def pre_post_ttest(curve: TemporalCurve, onset_s: float) -> tuple[float, float]:
    """Paired t-test of post-onset vs pre-onset accuracy, paired by fold.

    Each fold contributes its mean accuracy over endpoints at or before
    ``onset_s`` and its mean over endpoints after it.  Positive t means
    accuracy rose after the onset.
    """
    pre = curve.endpoints_s <= onset_s + 1e-12
    post = ~pre
    if not np.any(pre) or not np.any(post):
        raise ConfigError(
            f"onset {onset_s} s leaves no endpoints on one side of the split"
        )
    pre_by_fold = curve.fold_accuracies[pre].mean(axis=0)
    post_by_fold = curve.fold_accuracies[post].mean(axis=0)
    return paired_t_test(post_by_fold, pre_by_fold)


def export_temporal_csv(curve: TemporalCurve, path: str | Path) -> Path:
    """Write the curve as CSV with columns t, mean_acc, std_acc."""
    lines = ["t,mean_acc,std_acc"]
    for t, m, s in zip(curve.endpoints_s, curve.mean_accuracies, curve.std_accuracies):
        lines.append(f"{_fmt(t)},{_fmt(m)},{_fmt(s)}")
    return atomic_write_text(Path(path), "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# SVM coefficient importance
# ---------------------------------------------------------------------------


@dataclass
class ImportanceProfile:
    """Mean absolute SVM coefficient per feature, band-major ordering.

    ``per_feature[i * n_components + j]`` is the mean |w| of component j in
    band ``bands[i]``; ``band_means`` aggregates each band's block.
    """

    bands: tuple[str, ...]
    n_components: int
    per_feature: np.ndarray
    band_means: dict[str, float]


def feature_importance(models: list[FittedClassifier]) -> ImportanceProfile:
    """Average absolute SVM coefficients across models.

    Models must be band-power classifiers sharing one band tuple; weights
    live in standardized feature space, so magnitudes are comparable across
    features.  Sign flips of any model's weight vector leave the profile
    unchanged.
    """
    if not models:
        raise ConfigError("need at least one model")
    bands = models[0].bands
    if not bands:
        raise ConfigError("models carry no band features")
    n_feat = models[0].svm.weights.shape[0]
    for m in models:
        if m.kind != "fbcsp":
            raise ConfigError("importance profiles need band-power models")
        if m.bands != bands:
            raise ConfigError("models disagree on band selection")
        if m.svm.weights.shape[0] != n_feat:
            raise ConfigError("models disagree on feature dimensionality")
    if n_feat % len(bands) != 0:
        raise DataError(
            f"{n_feat} features do not divide evenly over {len(bands)} bands"
        )
    n_comp = n_feat // len(bands)
    per_feature = np.mean([np.abs(m.svm.weights) for m in models], axis=0)
    band_means = {
        band: float(per_feature[i * n_comp : (i + 1) * n_comp].mean())
        for i, band in enumerate(bands)
    }
    return ImportanceProfile(
        bands=bands,
        n_components=n_comp,
        per_feature=per_feature,
        band_means=band_means,
    )


def export_importance_csv(profile: ImportanceProfile, path: str | Path) -> Path:
    """Write the profile as CSV with columns band, csp_index, mean_abs_coef.

    ``csp_index`` is 1-based within each band's block.
    """
    lines = ["band,csp_index,mean_abs_coef"]
    for i, band in enumerate(profile.bands):
        for j in range(profile.n_components):
            v = profile.per_feature[i * profile.n_components + j]
            lines.append(f"{band},{j + 1},{_fmt(v)}")
    return atomic_write_text(Path(path), "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Scalp topography export
# ---------------------------------------------------------------------------

_TOPO_GRID = 64
_HEAD_RADIUS = 1.0
_SVG_SIZE = 420
_SVG_CENTER = 210.0
_SVG_SCALE = 180.0


def _diverging_color(t: float) -> str:
    """Blue-white-red diverging map for t in [-1, 1], white at 0."""
    t = min(1.0, max(-1.0, t))
    hi = (178, 24, 43) if t >= 0.0 else (33, 102, 172)
    u = abs(t)
    rgb = tuple(round(255 + (h - 255) * u) for h in hi)
    return "#%02x%02x%02x" % rgb


def _idw(values: np.ndarray, positions: np.ndarray, gx: float, gy: float) -> float:
    d2 = (positions[:, 0] - gx) ** 2 + (positions[:, 1] - gy) ** 2
    hit = np.argmin(d2)
    if d2[hit] < 1e-18:
        return float(values[hit])
    w = 1.0 / d2
    return float(np.sum(w * values) / np.sum(w))


def export_topomap(
    values,
    montage: ChannelMontage,
    path: str | Path,
    title: str = "",
) -> tuple[Path, Path]:
    """Render a channel-weight topography as SVG plus a channel,value CSV.

    The background interpolates the channel values onto a 64x64 grid with
    inverse-square-distance weighting, clipped to the head circle, on a
    diverging color scale symmetric about zero.  Channel markers are drawn
    at their montage positions.  The CSV round-trips the input exactly.

    Returns (svg_path, csv_path).
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.shape[0] != montage.n_channels:
        raise ConfigError(
            f"{values.shape[0]} values for {montage.n_channels} channels"
        )
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite topography value")
    vmax = float(np.max(np.abs(values)))
    scale = vmax if vmax > 0.0 else 1.0

    def to_px(x: float, y: float) -> tuple[float, float]:
        return _SVG_CENTER + x * _SVG_SCALE, _SVG_CENTER - y * _SVG_SCALE

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_SVG_SIZE}" height="{_SVG_SIZE}" '
        f'viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
        f'<rect width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="#ffffff"/>',
    ]
    extent = 1.05
    cell = 2.0 * extent / _TOPO_GRID
    cell_px = cell * _SVG_SCALE
    for iy in range(_TOPO_GRID):
        gy = extent - (iy + 0.5) * cell
        for ix in range(_TOPO_GRID):
            gx = -extent + (ix + 0.5) * cell
            if gx * gx + gy * gy > _HEAD_RADIUS * _HEAD_RADIUS:
                continue
            color = _diverging_color(_idw(values, montage.positions, gx, gy) / scale)
            px, py = to_px(gx - cell / 2.0, gy + cell / 2.0)
            parts.append(
                f'<rect x="{px:.2f}" y="{py:.2f}" '
                f'width="{cell_px + 0.1:.2f}" height="{cell_px + 0.1:.2f}" '
                f'fill="{color}"/>'
            )
    cx, cy = to_px(0.0, 0.0)
    r = _HEAD_RADIUS * _SVG_SCALE
    parts.append(
        f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" '
        f'fill="none" stroke="#000000" stroke-width="2"/>'
    )
    nose_l = to_px(-0.08, 0.985)
    nose_t = to_px(0.0, 1.09)
    nose_r = to_px(0.08, 0.985)
    parts.append(
        f'<polyline points="{nose_l[0]:.2f},{nose_l[1]:.2f} '
        f'{nose_t[0]:.2f},{nose_t[1]:.2f} {nose_r[0]:.2f},{nose_r[1]:.2f}" '
        f'fill="none" stroke="#000000" stroke-width="2"/>'
    )
    for name, (x, y), v in zip(montage.names, montage.positions, values):
        px, py = to_px(float(x), float(y))
        color = _diverging_color(float(v) / scale)
        parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" '
            f'fill="{color}" stroke="#000000" stroke-width="0.8"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{py + 13.0:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="9">{name}</text>'
        )
    if title:
        parts.append(
            f'<text x="{_SVG_CENTER:.2f}" y="14" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{title}</text>'
        )
    parts.append("</svg>")
    svg_path = Path(path)
    atomic_write_text(svg_path, "\n".join(parts) + "\n")

    csv_path = svg_path.with_suffix(".csv")
    lines = ["channel,value"]
    for name, v in zip(montage.names, values):
        lines.append(f"{name},{_fmt(v)}")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    return svg_path, csv_path


# ---------------------------------------------------------------------------
# Component-space trajectories
# ---------------------------------------------------------------------------


def csp_trajectory(
    ovr: OvrModel,
    dataset: Dataset,
    band: str,
    phase: Phase,
    components: tuple[int, ...] = (1, 2, 3),
    pad_len: int | None = None,
) -> dict[int, np.ndarray]:
    """Per-class grand-average paths in spatial-component space.

    Each class's trials are grand-averaged, band-filtered, cut to the phase
    block, and projected through that class's own one-vs-rest spatial
    filters.  ``components`` selects filter rows (1-based).  Every path is
    shifted to start at the origin and scaled so its maximum norm is 1
    (flat paths stay at zero), which makes paths invariant to uniform
    amplitude scaling of the input.

    Returns {class label: array of shape (len(components), block length)}.
    """
    n_ch = dataset.montage.n_channels
    components = tuple(int(c) for c in components)
    if not components or len(set(components)) != len(components):
        raise ConfigError("components must be non-empty and distinct")
    for c in components:
        if not (1 <= c <= n_ch):
            raise ConfigError(f"component {c} out of range 1..{n_ch}")
    _, planning_onset, movement_onset = _require_time_locked(dataset)
    fs = dataset.sample_rate
    labels = dataset.labels
    mont_hash = dataset.montage.content_hash()
    paths: dict[int, np.ndarray] = {}
    for cls in ovr.classes:
        member = ovr.members[cls]
        model = member.csp_models.get(band)
        if model is None:
            raise ConfigError(f"model for class {cls} has no band {band!r}")
        if member.montage_hash and member.montage_hash != mont_hash:
            raise DataError("model was fitted on a different montage")
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            raise DataError(f"no trials of class {cls}")
        # averaging, filtering and projection are all linear: average first
        avg = np.mean([dataset.trials[i].data for i in idx], axis=0)
        filt = _dsp.zero_phase(
            _dsp.preprocess(avg, fs, pad_len=pad_len),
            _dsp.band_filter(band, fs),
            pad_len=pad_len,
        )
        if phase is Phase.PLANNING:
            block = filt[:, planning_onset:movement_onset]
        else:
            block = filt[:, movement_onset:]
        proj = project(model, block)
        sel = proj[[c - 1 for c in components], :]
        sel = sel - sel[:, :1]
        peak = float(np.max(np.linalg.norm(sel, axis=0)))
        paths[cls] = sel / peak if peak > 0.0 else sel
    return paths


def export_trajectory(
    paths: dict[int, np.ndarray],
    path: str | Path,
    components: tuple[int, ...] = (1, 2, 3),
    title: str = "",
) -> Path:
    """Plot the first two selected components of each class path as SVG."""
    if not paths:
        raise ConfigError("no trajectory paths to export")
    for label, arr in paths.items():
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise ConfigError(f"path for class {label} needs at least 2 components")
    extent = max(float(np.max(np.abs(arr[:2]))) for arr in paths.values())
    if extent == 0.0:
        extent = 1.0
    scale = (_SVG_SCALE - 10.0) / extent

    def to_px(x: float, y: float) -> tuple[float, float]:
        return _SVG_CENTER + x * scale, _SVG_CENTER - y * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_SVG_SIZE}" height="{_SVG_SIZE}" '
        f'viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
        f'<rect width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="#ffffff"/>',
        f'<line x1="10" y1="{_SVG_CENTER:.2f}" x2="{_SVG_SIZE - 10}" '
        f'y2="{_SVG_CENTER:.2f}" stroke="#cccccc" stroke-width="1"/>',
        f'<line x1="{_SVG_CENTER:.2f}" y1="10" x2="{_SVG_CENTER:.2f}" '
        f'y2="{_SVG_SIZE - 10}" stroke="#cccccc" stroke-width="1"/>',
    ]
    for li, label in enumerate(sorted(paths)):
        arr = paths[label]
        pts = " ".join(
            "%.3f,%.3f" % to_px(float(x), float(y)) for x, y in zip(arr[0], arr[1])
        )
        color = _class_color(label)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        lx, ly = 20, 24 + 16 * li
        parts.append(
            f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{lx + 15}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{_class_name(label)}</text>'
        )
    ox, oy = to_px(0.0, 0.0)
    parts.append(f'<circle cx="{ox:.2f}" cy="{oy:.2f}" r="3" fill="#000000"/>')
    parts.append(
        f'<text x="{_SVG_CENTER:.2f}" y="{_SVG_SIZE - 6}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10">component {components[0]}</text>'
    )
    parts.append(
        f'<text x="12" y="{_SVG_CENTER:.2f}" font-family="sans-serif" '
        f'font-size="10" transform="rotate(-90 12 {_SVG_CENTER:.2f})" '
        f'text-anchor="middle">component {components[1]}</text>'
    )
    if title:
        parts.append(
            f'<text x="{_SVG_CENTER:.2f}" y="14" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{title}</text>'
        )
    parts.append("</svg>")
    return atomic_write_text(Path(path), "\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Slow-potential grand-average waveforms
# ---------------------------------------------------------------------------


def class_waveforms(
    dataset: Dataset, cache: FeatureCache | None = None
) -> dict[int, np.ndarray]:
    """Per-class lowpassed grand-average matrices (channels x samples)."""
    _require_time_locked(dataset)
    fs = dataset.sample_rate
    cache = cache if cache is not None else FeatureCache(dataset)
    labels = dataset.labels
    out: dict[int, np.ndarray] = {}
    for cls in dataset.classes():
        idx = np.flatnonzero(labels == cls)
        acc = np.zeros_like(dataset.trials[0].data)
        for i in idx:
            acc += _dsp.mrcp_lowpass(cache.preprocessed(int(i)), fs, pad_len=cache.pad_len)
        out[cls] = acc / idx.size
    return out


def export_waveform_svg(
    curves: dict[int, np.ndarray],
    fs: float,
    movement_onset: int,
    channel_name: str,
    path: str | Path,
) -> Path:
    """One waveform panel: per-class lowpassed averages for one channel.

    Curves are plotted against seconds relative to movement onset (dashed
    line at zero) and jointly scaled by the panel's peak magnitude so
    relative class amplitudes are preserved.
    """
    if not curves:
        raise ConfigError("no waveforms to plot")
    n = None
    for arr in curves.values():
        arr = np.asarray(arr)
        if arr.ndim != 1:
            raise ConfigError("waveform curves must be 1-D")
        if n is None:
            n = arr.shape[0]
        elif arr.shape[0] != n:
            raise ConfigError("waveform curves differ in length")
    peak = max(float(np.max(np.abs(np.asarray(a)))) for a in curves.values())
    if peak == 0.0:
        peak = 1.0
    width, height = 520, 240
    left, right, top, bottom = 40, 12, 22, 26
    t0 = -movement_onset / fs
    t1 = (n - 1 - movement_onset) / fs

    def to_px(t: float, v: float) -> tuple[float, float]:
        x = left + (t - t0) / (t1 - t0) * (width - left - right)
        y = top + (1.0 - v / peak) / 2.0 * (height - top - bottom)
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    zx, _ = to_px(0.0, 0.0)
    _, zy = to_px(t0, 0.0)
    parts.append(
        f'<line x1="{left}" y1="{zy:.2f}" x2="{width - right}" y2="{zy:.2f}" '
        f'stroke="#cccccc" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{zx:.2f}" y1="{top}" x2="{zx:.2f}" y2="{height - bottom}" '
        f'stroke="#888888" stroke-width="1" stroke-dasharray="4,3"/>'
    )
    times = (np.arange(n) - movement_onset) / fs
    for li, label in enumerate(sorted(curves)):
        arr = np.asarray(curves[label], dtype=np.float64)
        pts = " ".join(
            "%.2f,%.2f" % to_px(float(t), float(v)) for t, v in zip(times, arr)
        )
        color = _class_color(label)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.3"/>'
        )
        lx, ly = left + 8, top + 12 + 14 * li
        parts.append(
            f'<rect x="{lx}" y="{ly - 8}" width="9" height="9" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{lx + 13}" y="{ly}" font-family="sans-serif" '
            f'font-size="10">{_class_name(label)}</text>'
        )
    parts.append(
        f'<text x="{(left + width - right) / 2:.2f}" y="{height - 8}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="10">'
        f"time from movement onset (s)</text>"
    )
    parts.append(
        f'<text x="{(left + width - right) / 2:.2f}" y="14" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{channel_name}</text>'
    )
    parts.append("</svg>")
    return atomic_write_text(Path(path), "\n".join(parts) + "\n")
