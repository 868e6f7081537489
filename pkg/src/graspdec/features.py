"""Feature extraction: band-filtered spatial-pattern features and
windowed slow-potential features, plus leakage-safe pipeline helpers.

Band features follow the filter-then-segment convention: the whole
preprocessed trial is band-filtered before the phase block is cut out, so
filter transients never straddle the analysis window edges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import csp as _csp
from . import dsp as _dsp
from .core import Dataset, Phase, Trial
from .errors import ConfigError, DataError

# Slow-potential analysis window: seven 200 ms mean-amplitude windows
# starting 600 ms before movement onset.  Trials must extend at least one
# second past onset for the window of interest to be in range.
MRCP_WOI_PRE_S = 0.6
MRCP_WOI_POST_S = 1.0
MRCP_N_WINDOWS = 7
MRCP_WINDOW_S = 0.2


def _order_bands(bands) -> tuple[str, ...]:
    bands = tuple(bands)
    for b in bands:
        if b not in _dsp.BANDS:
            raise ConfigError(f"unknown band {b!r}; expected one of {_dsp.BAND_ORDER}")
    if len(set(bands)) != len(bands):
        raise ConfigError("duplicate band names")
    return tuple(b for b in _dsp.BAND_ORDER if b in bands)


@dataclass
class FbcspFeatureSet:
    """Per-band log-variance features for one trial.

    ``per_band[b]`` is the per-filter feature vector for band ``b``;
    ``broadband`` concatenates all bands in canonical order.
    """

    bands: tuple[str, ...]
    per_band: dict[str, np.ndarray]

    @property
    def broadband(self) -> np.ndarray:
        return np.concatenate([self.per_band[b] for b in self.bands])


def _segment(data: np.ndarray, trial: Trial, phase: Phase | None, window: tuple[int, int] | None) -> np.ndarray:
    if (phase is None) == (window is None):
        raise ConfigError("specify exactly one of phase or window")
    if window is not None:
        start, stop = int(window[0]), int(window[1])
        if not (0 <= start < stop <= data.shape[-1]):
            raise ConfigError(f"window {window} out of range for {data.shape[-1]} samples")
        return data[:, start:stop]
    if phase is Phase.PLANNING:
        return data[:, trial.planning_onset : trial.movement_onset]
    return data[:, trial.movement_onset :]


def extract_fbcsp(
    trial: Trial,
    fs: float,
    models: dict[str, _csp.CspModel],
    bands: tuple[str, ...] | None = None,
    phase: Phase | None = None,
    window: tuple[int, int] | None = None,
    pad_len: int | None = None,
    preprocessed: np.ndarray | None = None,
) -> FbcspFeatureSet:
    """Band-filter a trial, cut the analysis block, project, take log-variances.

    Parameters
    ----------
    trial : Trial
        Trial whose raw data will be broadband-preprocessed first (pass
        ``preprocessed`` to skip that step).
    models : dict
        Fitted spatial filter model per band name.
    bands : tuple of str, optional
        Bands to extract; defaults to the model keys, canonical order.
    phase, window
        Analysis block: a named phase or an explicit (start, stop) sample
        window on the full trial.
    """
    bands = _order_bands(bands if bands is not None else models.keys())
    if preprocessed is None:
        preprocessed = _dsp.preprocess(trial.data, fs, pad_len=pad_len)
    per_band: dict[str, np.ndarray] = {}
    for band in bands:
        if band not in models:
            raise ConfigError(f"no fitted model for band {band!r}")
        filtered = _dsp.zero_phase(preprocessed, _dsp.band_filter(band, fs), pad_len=pad_len)
        block = _segment(filtered, trial, phase, window)
        if block.shape[1] == 0:
            raise DataError("empty analysis block")
        projected = _csp.project(models[band], block)
        per_band[band] = _csp.log_variance_features(projected)
    return FbcspFeatureSet(bands=bands, per_band=per_band)


@dataclass
class MrcpFeatureMatrix:
    """Mean-amplitude feature matrix (channels x windows) around movement onset.

    ``values`` is z-normalized over the whole matrix; ``window_bounds``
    holds the eight absolute sample offsets delimiting the seven windows.
    """

    values: np.ndarray
    window_bounds: np.ndarray
    sample_rate: float

    def flattened(self) -> np.ndarray:
        """Row-major (channel-major) flattening to one feature row."""
        return self.values.reshape(-1)


def mrcp_window_bounds(movement_onset: int, fs: float) -> np.ndarray:
    """Absolute sample boundaries of the seven slow-potential windows.

    Boundaries sit at ``round(k * 0.2 * fs)`` cumulative offsets from
    600 ms before movement onset, k = 0..7, so consecutive windows tile
    the spanned range exactly despite the non-integer window length.
    """
    start = int(movement_onset) - int(round(MRCP_WOI_PRE_S * fs))
    return start + np.array(
        [int(round(k * MRCP_WINDOW_S * fs)) for k in range(MRCP_N_WINDOWS + 1)]
    )


def extract_mrcp(
    trial: Trial,
    fs: float,
    pad_len: int | None = None,
    preprocessed: np.ndarray | None = None,
) -> MrcpFeatureMatrix:
    """Windowed mean amplitudes of the 6 Hz-lowpassed trial around movement onset.

    The preprocessed trial is lowpassed (zero phase), averaged over seven
    200 ms windows per channel starting 600 ms before movement onset, and
    the resulting matrix is z-normalized globally.  A matrix with (near)
    zero variance, e.g. from constant input, normalizes to all zeros.

    Raises DataError when the trial does not cover 600 ms before to
    1000 ms after movement onset.
    """
    bounds = mrcp_window_bounds(trial.movement_onset, fs)
    end_required = trial.movement_onset + int(round(MRCP_WOI_POST_S * fs))
    if bounds[0] < 0 or end_required > trial.n_samples:
        raise DataError(
            "trial too short for the slow-potential window "
            f"(need samples {bounds[0]}..{end_required})"
        )
    if preprocessed is None:
        preprocessed = _dsp.preprocess(trial.data, fs, pad_len=pad_len)
    low = _dsp.mrcp_lowpass(preprocessed, fs, pad_len=pad_len)
    n_ch = low.shape[0]
    vals = np.empty((n_ch, MRCP_N_WINDOWS))
    for w in range(MRCP_N_WINDOWS):
        vals[:, w] = low[:, bounds[w] : bounds[w + 1]].mean(axis=1)
    mean = float(vals.mean())
    std = float(vals.std())
    # flatlined matrices carry no shape information: map them to zeros
    # instead of amplifying filter-transient residue by a ~0 divisor
    if std <= 1e-8 * max(1.0, abs(mean)):
        vals = np.zeros_like(vals)
    else:
        vals = (vals - mean) / std
    return MrcpFeatureMatrix(values=vals, window_bounds=bounds, sample_rate=fs)


def grand_average_mrcp(
    trials: list[Trial],
    fs: float,
    channel: int,
    pad_len: int | None = None,
    preprocessed: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Grand-average slow-potential waveform for one channel.

    Per-sample mean across time-locked trials of the 6 Hz-lowpassed
    channel, normalized to peak magnitude 1 (all-zero averages stay zero).
    """
    if not trials:
        raise DataError("no trials to average")
    n = trials[0].n_samples
    onset = trials[0].movement_onset
    for t in trials:
        if t.n_samples != n or t.movement_onset != onset:
            raise DataError("trials are not time-locked; cannot grand-average")
    if not (0 <= channel < trials[0].data.shape[0]):
        raise DataError(f"channel index {channel} out of range")
    acc = np.zeros(n)
    for i, t in enumerate(trials):
        pre = preprocessed[i] if preprocessed is not None else _dsp.preprocess(t.data, fs, pad_len=pad_len)
        acc += _dsp.mrcp_lowpass(pre, fs, pad_len=pad_len)[channel]
    acc /= len(trials)
    peak = float(np.max(np.abs(acc)))
    if peak == 0.0:
        return acc
    return acc / peak


# ---------------------------------------------------------------------------
# Pipelines: per-trial statistics cached up front, per-fold fitting on
# training indices only
# ---------------------------------------------------------------------------


class FeatureCache:
    """Lazy per-trial cache for one dataset.

    Stores broadband-preprocessed trials, per-band analysis-block
    covariances, and flattened slow-potential feature rows.  Everything is
    computed per trial in isolation, so cached values can never leak
    information across cross-validation folds.
    """

    def __init__(self, dataset: Dataset, pad_len: int | None = None):
        self.dataset = dataset
        self.pad_len = pad_len
        self._preproc: dict[int, np.ndarray] = {}
        self._cov: dict[tuple, np.ndarray] = {}
        self._mrcp: np.ndarray | None = None

    def preprocessed(self, idx: int) -> np.ndarray:
        got = self._preproc.get(idx)
        if got is None:
            got = _dsp.preprocess(
                self.dataset.trials[idx].data, self.dataset.sample_rate, pad_len=self.pad_len
            )
            self._preproc[idx] = got
        return got

    def ensure_covariances(self, bands: tuple[str, ...], segkeys: list[tuple]) -> None:
        """Build any missing (trial, band, segment) covariances.

        One band-filtering pass per (trial, band) covers all requested
        segments, which keeps repeated pipeline construction cheap.
        """
        fs = self.dataset.sample_rate
        for band in bands:
            for idx, trial in enumerate(self.dataset.trials):
                missing = [k for k in segkeys if (idx, band, k) not in self._cov]
                if not missing:
                    continue
                filtered = _dsp.zero_phase(
                    self.preprocessed(idx), _dsp.band_filter(band, fs), pad_len=self.pad_len
                )
                for key in missing:
                    block = self._cut(filtered, trial, key)
                    self._cov[(idx, band, key)] = _csp.trial_covariance(block)

    @staticmethod
    def _cut(filtered: np.ndarray, trial: Trial, segkey: tuple) -> np.ndarray:
        if segkey[0] == "phase":
            return _segment(filtered, trial, Phase(segkey[1]), None)
        return _segment(filtered, trial, None, (segkey[1], segkey[2]))

    def covariance(self, idx: int, band: str, segkey: tuple) -> np.ndarray:
        key = (idx, band, segkey)
        if key not in self._cov:
            self.ensure_covariances((band,), [segkey])
        return self._cov[key]

    def mrcp_rows(self) -> np.ndarray:
        if self._mrcp is None:
            fs = self.dataset.sample_rate
            rows = [
                extract_mrcp(t, fs, pad_len=self.pad_len, preprocessed=self.preprocessed(i)).flattened()
                for i, t in enumerate(self.dataset.trials)
            ]
            self._mrcp = np.stack(rows)
        return self._mrcp


def _select_indices(dataset: Dataset, class_a: int, class_b: int | None) -> np.ndarray:
    labels = dataset.labels
    if class_b is None:
        keep = np.arange(len(labels))
    else:
        if class_a == class_b:
            raise ConfigError("scenario classes must differ")
        keep = np.flatnonzero((labels == class_a) | (labels == class_b))
    if not np.any(labels[keep] == class_a):
        raise DataError(f"no trials of class {class_a}")
    if keep.size == 0 or np.all(labels[keep] == class_a):
        raise DataError("scenario needs trials of both classes")
    return keep


class FbcspPipeline:
    """Spatial-pattern feature pipeline for one binary contrast.

    Per-trial band covariances are fixed up front; ``fit(train_indices)``
    only averages training-trial covariances and solves the filter
    eigenproblem, so validation trials cannot influence fitted state.
    Features come from the identity var(W^T E) = diag(W^T (E E^T) W),
    evaluated on the cached normalized covariances (the log-variance
    normalization cancels the scale).
    """

    def __init__(
        self,
        dataset: Dataset,
        bands,
        phase: Phase | None = None,
        window: tuple[int, int] | None = None,
        class_a: int = 0,
        class_b: int | None = 1,
        cache: FeatureCache | None = None,
        pad_len: int | None = None,
    ):
        self.bands = _order_bands(bands)
        if not self.bands:
            raise ConfigError("need at least one band")
        if (phase is None) == (window is None):
            raise ConfigError("specify exactly one of phase or window")
        self.phase = phase
        self.window = None if window is None else (int(window[0]), int(window[1]))
        self.segkey = (
            ("phase", phase.value) if phase else ("window",) + self.window
        )
        self.dataset = dataset
        self.class_a = class_a
        self.class_b = class_b
        cache = cache if cache is not None else FeatureCache(dataset, pad_len=pad_len)
        cache.ensure_covariances(self.bands, [self.segkey])
        self.indices = _select_indices(dataset, class_a, class_b)
        labels = dataset.labels[self.indices]
        self.y = np.where(labels == class_a, 1.0, -1.0)
        self._covs = {
            band: np.stack([cache.covariance(i, band, self.segkey) for i in self.indices])
            for band in self.bands
        }
        self.montage_hash = dataset.montage.content_hash()

    @property
    def scenario(self) -> str:
        from .ml import scenario_name

        return scenario_name(self.class_a, self.class_b)

    def fit(self, train_idx: np.ndarray) -> "FittedFbcsp":
        train_idx = np.asarray(train_idx, dtype=np.int64)
        mask_a = self.y[train_idx] > 0
        if not np.any(mask_a) or np.all(mask_a):
            raise DataError("training subset lost one of the classes")
        models = {}
        for band in self.bands:
            covs = self._covs[band][train_idx]
            cov_a = covs[mask_a].mean(axis=0)
            cov_b = covs[~mask_a].mean(axis=0)
            models[band] = _csp.fit_csp_from_covariances(
                cov_a,
                cov_b,
                band=band,
                scenario=self.scenario,
                phase=self.phase.value if self.phase else "window",
                montage_hash=self.montage_hash,
            )
        return FittedFbcsp(models=models, pipeline=self)


class FittedFbcsp:
    """Fold-fitted spatial filters bound to the pipeline's cached covariances."""

    def __init__(self, models: dict[str, _csp.CspModel], pipeline: FbcspPipeline):
        self.models = models
        self.pipeline = pipeline

    def features(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        parts = []
        floored = False
        for band in self.pipeline.bands:
            w = self.models[band].filters
            covs = self.pipeline._covs[band][idx]
            var = np.einsum("kj,nkl,lj->nj", w, covs, w)
            if np.any(var < _csp.VAR_FLOOR):
                floored = True
            var = np.maximum(var, _csp.VAR_FLOOR)
            parts.append(np.log(var / var.sum(axis=1, keepdims=True)))
        if floored:
            warnings.warn(
                "zero-variance component floored before log feature", RuntimeWarning
            )
        return np.concatenate(parts, axis=1)


class MrcpPipeline:
    """Slow-potential feature pipeline for one binary contrast.

    Feature rows are per-trial and label-independent, so ``fit`` has no
    trainable state; cross-validation still refits the standardizer and
    SVM per fold.
    """

    def __init__(
        self,
        dataset: Dataset,
        class_a: int = 0,
        class_b: int | None = 1,
        cache: FeatureCache | None = None,
        pad_len: int | None = None,
    ):
        cache = cache if cache is not None else FeatureCache(dataset, pad_len=pad_len)
        rows = cache.mrcp_rows()
        self.dataset = dataset
        self.class_a = class_a
        self.class_b = class_b
        self.indices = _select_indices(dataset, class_a, class_b)
        labels = dataset.labels[self.indices]
        self.y = np.where(labels == class_a, 1.0, -1.0)
        self._rows = rows[self.indices]

    def fit(self, train_idx: np.ndarray) -> "FittedMrcp":
        return FittedMrcp(pipeline=self)


class FittedMrcp:
    models: dict = {}

    def __init__(self, pipeline: MrcpPipeline):
        self.pipeline = pipeline

    def features(self, idx: np.ndarray) -> np.ndarray:
        return self.pipeline._rows[np.asarray(idx, dtype=np.int64)]
