"""Classification stack: standardization, linear SVM, cross-validation,
one-vs-rest fusion, metrics, and paired significance tests.

The SVM is a soft-margin linear machine trained in the dual by coordinate
descent (bias handled as an augmented, regularized constant feature).
Training stops when the duality gap falls below 1e-6 of the primal
objective, so fitted weights are solver-grade optima rather than
early-stopped approximations.  All randomized steps (fold assignment,
coordinate order) derive from fixed seeds; fitting the same data twice
gives bit-identical models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _stats

from . import features as _features
from .core import CLASS_NAMES, Dataset, Phase, Trial
from .csp import CspModel, decode_array, encode_array
from .errors import ConfigError, DataError, NumericalError

BUNDLE_FORMAT_VERSION = 1

DEFAULT_C_GRID: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
DEFAULT_FOLDS = 10

# Internal seed for the coordinate-descent visit order; training is a
# deterministic function of (features, labels, C, warm start).
_CD_ORDER_SEED = 0x5EED

_GAP_TOL = 1e-6
_KKT_TOL = 1e-6


@dataclass
class Standardizer:
    """Per-feature affine normalization fitted on training data only."""

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) / self.scale

    def to_json(self) -> dict:
        return {
            "mean_b64": encode_array(self.mean),
            "scale_b64": encode_array(self.scale),
            "n_features": int(self.mean.shape[0]),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Standardizer":
        n = int(obj["n_features"])
        return cls(
            mean=decode_array(obj["mean_b64"], (n,)),
            scale=decode_array(obj["scale_b64"], (n,)),
        )


def fit_standardizer(x: np.ndarray) -> Standardizer:
    """Fit per-column mean and population standard deviation.

    Zero-variance columns get scale 1.0 so constant features pass through
    centered instead of dividing by zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"feature matrix must be 2-D and non-empty, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite feature value")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std == 0.0, 1.0, std)
    return Standardizer(mean=mean, scale=scale)


@dataclass
class LinearSvmModel:
    """Weights of a trained linear SVM; decision f(x) = w . x + b."""

    weights: np.ndarray
    bias: float
    C: float
    dual_objective: float = 0.0
    primal_objective: float = 0.0
    n_epochs: int = 0
    # dual variables, kept for warm starts; not serialized
    alpha: np.ndarray | None = None

    def to_json(self) -> dict:
        return {
            "weights_b64": encode_array(self.weights),
            "bias": float(self.bias),
            "C": float(self.C),
            "n_features": int(self.weights.shape[0]),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearSvmModel":
        n = int(obj["n_features"])
        return cls(
            weights=decode_array(obj["weights_b64"], (n,)),
            bias=float(obj["bias"]),
            C=float(obj["C"]),
        )


def train_linear_svm(
    x: np.ndarray,
    y: np.ndarray,
    c: float,
    tol: float = _GAP_TOL,
    max_epochs: int = 50000,
    alpha0: np.ndarray | None = None,
) -> LinearSvmModel:
    """Train a soft-margin linear SVM by dual coordinate descent.

    Minimizes ``0.5 ||w~||^2 + c * sum_i hinge(y_i f(x_i))`` where the bias
    enters as an augmented all-ones feature (so it is regularized; for the
    symmetric problems here this matches the textbook optimum).  The dual
    box-constrained QP is solved coordinate-wise with a seeded visit order
    restricted each epoch to coordinates whose KKT conditions are still
    violated.  Convergence requires both a duality gap below ``tol`` times
    the primal objective and projected gradients below 1e-6.

    Parameters
    ----------
    x : ndarray, shape (n, d)
        Feature rows (standardize first for sane conditioning).
    y : ndarray, shape (n,)
        Labels in {-1, +1}.
    c : float
        Soft-margin penalty, > 0.
    alpha0 : ndarray, optional
        Warm-start dual variables, clipped into [0, c].

    Raises
    ------
    NumericalError
        If the epoch budget is exhausted before convergence.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"feature matrix must be 2-D and non-empty, got {x.shape}")
    n, d = x.shape
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n or not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be -1/+1, one per feature row")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite feature value")
    if not (np.isfinite(c) and c > 0.0):
        raise ConfigError(f"penalty C must be positive, got {c}")

    xy = np.hstack([x, np.ones((n, 1))]) * y[:, None]  # row i = y_i * [x_i, 1]
    qii = np.einsum("ij,ij->i", xy, xy)
    if alpha0 is not None:
        alpha = np.clip(np.asarray(alpha0, dtype=np.float64).reshape(-1), 0.0, c)
        if alpha.shape[0] != n:
            raise ConfigError("warm-start alpha length mismatch")
        w = xy.T @ alpha
    else:
        alpha = np.zeros(n)
        w = np.zeros(d + 1)
    rng = np.random.Generator(np.random.PCG64(_CD_ORDER_SEED))

    primal = dual = 0.0
    for epoch in range(max_epochs):
        g_all = xy @ w - 1.0
        pg = np.where(
            alpha <= 0.0,
            np.minimum(g_all, 0.0),
            np.where(alpha >= c, np.maximum(g_all, 0.0), g_all),
        )
        max_pg = float(np.max(np.abs(pg))) if n else 0.0
        wsq = float(w @ w)
        hinge = float(np.sum(np.maximum(-g_all, 0.0)))
        primal = 0.5 * wsq + c * hinge
        dual = float(np.sum(alpha)) - 0.5 * wsq
        if primal - dual <= tol * max(primal, 1e-300) and max_pg <= _KKT_TOL:
            return LinearSvmModel(
                weights=w[:d].copy(),
                bias=float(w[d]),
                C=float(c),
                dual_objective=dual,
                primal_objective=primal,
                n_epochs=epoch,
                alpha=alpha,
            )
        active = np.flatnonzero(pg != 0.0)
        if active.size == 0:
            continue
        order = active[rng.permutation(active.size)]
        for i in order:
            xi = xy[i]
            g = float(xi @ w) - 1.0
            a = alpha[i]
            if a <= 0.0 and g >= 0.0:
                continue
            if a >= c and g <= 0.0:
                continue
            anew = a - g / qii[i]
            if anew < 0.0:
                anew = 0.0
            elif anew > c:
                anew = c
            if anew != a:
                w += (anew - a) * xi
                alpha[i] = anew
    raise NumericalError(
        f"SVM did not converge in {max_epochs} epochs (gap {primal - dual:.3e})"
    )


def decision_value(model: LinearSvmModel, x: np.ndarray) -> float:
    """Decision function f(x) = w . x + b for one (standardized) feature vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.weights.shape[0]:
        raise DataError(
            f"feature length {x.shape[0]} != model dimension {model.weights.shape[0]}"
        )
    return float(model.weights @ x + model.bias)


def decision_values(model: LinearSvmModel, x: np.ndarray) -> np.ndarray:
    """Vectorized decision function over feature rows."""
    x = np.asarray(x, dtype=np.float64)
    return x @ model.weights + model.bias


def stratified_folds(
    labels: np.ndarray, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded stratified fold assignment.

    Each class's indices are permuted (PCG64) and dealt round-robin, so
    per-fold class counts differ by at most one.  Returns ``k`` pairs of
    sorted (train_indices, validation_indices).

    Raises DataError when any class has fewer trials than folds.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    fold_of = np.empty(len(labels), dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise DataError(
                f"class {cls} has {len(idx)} trials, fewer than k={k} folds"
            )
        perm = idx[rng.permutation(len(idx))]
        fold_of[perm] = np.arange(len(perm)) % k
    out = []
    for f in range(k):
        out.append((np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)))
    return out


@dataclass
class CvReport:
    """Cross-validation outcome for one decision head."""

    fold_accuracies: np.ndarray
    mean_accuracy: float
    std_accuracy: float
    chosen_c: float
    grid_means: dict[float, float]
    k: int
    seed: int

    def to_json(self) -> dict:
        return {
            "fold_accuracies": [float(a) for a in self.fold_accuracies],
            "mean_accuracy": float(self.mean_accuracy),
            "std_accuracy": float(self.std_accuracy),
            "chosen_c": float(self.chosen_c),
            "grid_means": {repr(float(c)): float(m) for c, m in self.grid_means.items()},
            "k": int(self.k),
            "seed": int(self.seed),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CvReport":
        return cls(
            fold_accuracies=np.array(obj["fold_accuracies"], dtype=np.float64),
            mean_accuracy=float(obj["mean_accuracy"]),
            std_accuracy=float(obj["std_accuracy"]),
            chosen_c=float(obj["chosen_c"]),
            grid_means={float(c): float(m) for c, m in obj["grid_means"].items()},
            k=int(obj["k"]),
            seed=int(obj["seed"]),
        )


@dataclass
class FoldModel:
    """Per-fold fitted state, returned only when requested (leakage audits)."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    fitted: object
    scaler: Standardizer
    svms: dict[float, LinearSvmModel]


def kfold_cv(
    pipeline,
    k: int = DEFAULT_FOLDS,
    seed: int = 0,
    c_grid: tuple[float, ...] = DEFAULT_C_GRID,
    collect_fold_models: bool = False,
) -> CvReport:
    """Leakage-safe stratified k-fold CV with penalty selection.

    ``pipeline`` exposes ``y`` (labels in -1/+1 over its trials),
    ``fit(train_indices)`` and the fitted object's ``features(indices)``.
    Every fold refits the full chain (spatial filters where applicable,
    standardizer, SVM) on in-fold training trials only; validation trials
    never influence any fitted parameter.  The penalty with the highest
    mean validation accuracy wins; ties go to the smallest C.
    """
    y = np.asarray(pipeline.y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DataError("single-class training set")
    grid = tuple(sorted({float(c) for c in c_grid}))
    if not grid:
        raise ConfigError("empty penalty grid")
    folds = stratified_folds(y, k, seed)
    acc = np.zeros((len(grid), k))
    fold_models: list[FoldModel] = []
    for f, (tr, va) in enumerate(folds):
        fitted = pipeline.fit(tr)
        scaler = fit_standardizer(fitted.features(tr))
        xtr = scaler.transform(fitted.features(tr))
        xva = scaler.transform(fitted.features(va))
        ytr, yva = y[tr], y[va]
        alpha = None
        svms: dict[float, LinearSvmModel] = {}
        for ci, c in enumerate(grid):
            model = train_linear_svm(xtr, ytr, c, alpha0=alpha)
            alpha = model.alpha
            pred = np.where(decision_values(model, xva) >= 0.0, 1.0, -1.0)
            acc[ci, f] = accuracy(yva, pred)
            if collect_fold_models:
                svms[c] = model
        if collect_fold_models:
            fold_models.append(
                FoldModel(train_idx=tr, val_idx=va, fitted=fitted, scaler=scaler, svms=svms)
            )
    grid_means = acc.mean(axis=1)
    best = int(np.argmax(grid_means))  # argmax takes the first max: smallest C wins ties
    report = CvReport(
        fold_accuracies=acc[best].copy(),
        mean_accuracy=float(grid_means[best]),
        std_accuracy=float(acc[best].std()),
        chosen_c=grid[best],
        grid_means={c: float(m) for c, m in zip(grid, grid_means)},
        k=k,
        seed=seed,
    )
    if collect_fold_models:
        report.fold_models = fold_models  # type: ignore[attr-defined]
    return report


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise DataError("label vectors must be non-empty and the same length")
    return float(np.mean(y_true == y_pred))


def confusion_matrix(y_true, y_pred, classes: tuple[int, ...]) -> np.ndarray:
    """Counts[i, j] = trials of classes[i] predicted as classes[j]."""
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise DataError("label vectors must be the same length")
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        out[index[int(t)], index[int(p)]] += 1
    return out


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on matched samples.

    Degenerate cases are pinned rather than NaN: identical samples give
    (0.0, 1.0); zero-variance nonzero differences give (+-inf, 0.0).
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise ConfigError("paired test needs two equal-length samples, n >= 2")
    d = a - b
    if np.all(d == 0.0):
        return 0.0, 1.0
    md = float(d.mean())
    sd = float(d.std(ddof=1))
    n = d.size
    if sd == 0.0:
        return math.copysign(math.inf, md), 0.0
    t = md / (sd / math.sqrt(n))
    p = 2.0 * float(_stats.t.sf(abs(t), n - 1))
    return t, p


# ---------------------------------------------------------------------------
# Trial-level classifiers
# ---------------------------------------------------------------------------


def scenario_name(class_a: int, class_b: int | None) -> str:
    left = CLASS_NAMES[class_a]
    right = "rest" if class_b is None else CLASS_NAMES[class_b]
    return f"{left}-vs-{right}"


@dataclass
class FittedClassifier:
    """One binary decision head: feature chain plus standardizer and SVM.

    ``kind`` is "fbcsp" (band-filtered spatial-pattern features) or "mrcp"
    (windowed slow-potential features).  ``negative_class`` of None means
    the head separates ``positive_class`` from all other classes.
    """

    kind: str
    bands: tuple[str, ...]
    phase: str
    positive_class: int
    negative_class: int | None
    csp_models: dict[str, CspModel]
    scaler: Standardizer
    svm: LinearSvmModel
    cv: CvReport
    sample_rate: float
    montage_hash: str = ""
    window: tuple[int, int] | None = None

    @property
    def scenario(self) -> str:
        return scenario_name(self.positive_class, self.negative_class)

    def feature_vector(self, trial: Trial, preprocessed: np.ndarray | None = None) -> np.ndarray:
        if self.kind == "fbcsp":
            fs = _features.extract_fbcsp(
                trial,
                self.sample_rate,
                self.csp_models,
                bands=self.bands,
                phase=None if self.window else Phase(self.phase),
                window=self.window,
                preprocessed=preprocessed,
            )
            return fs.broadband
        if self.kind == "mrcp":
            m = _features.extract_mrcp(trial, self.sample_rate, preprocessed=preprocessed)
            return m.flattened()
        raise ConfigError(f"unknown classifier kind {self.kind!r}")

    def decision(self, trial: Trial, preprocessed: np.ndarray | None = None) -> float:
        x = self.scaler.transform(self.feature_vector(trial, preprocessed)[None, :])[0]
        return decision_value(self.svm, x)

    def predict(self, trial: Trial, preprocessed: np.ndarray | None = None) -> int:
        """Binary prediction; ties at f == 0 go to the positive class."""
        if self.negative_class is None:
            raise ConfigError("one-vs-rest head cannot predict alone; use OvrModel")
        f = self.decision(trial, preprocessed)
        return self.positive_class if f >= 0.0 else self.negative_class

    def to_json(self) -> dict:
        return {
            "format_version": BUNDLE_FORMAT_VERSION,
            "kind": self.kind,
            "bands": list(self.bands),
            "phase": self.phase,
            "window": list(self.window) if self.window else None,
            "positive_class": int(self.positive_class),
            "negative_class": None if self.negative_class is None else int(self.negative_class),
            "scenario": self.scenario,
            "sample_rate": float(self.sample_rate),
            "montage_hash": self.montage_hash,
            "csp": {band: m.to_json() for band, m in self.csp_models.items()},
            "scaler": self.scaler.to_json(),
            "svm": self.svm.to_json(),
            "cv": self.cv.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FittedClassifier":
        if not isinstance(obj, dict) or "format_version" not in obj:
            raise DataError("model bundle lacks a format version")
        if obj["format_version"] != BUNDLE_FORMAT_VERSION:
            raise DataError(f"unknown bundle format version {obj['format_version']!r}")
        window = obj.get("window")
        return cls(
            kind=str(obj["kind"]),
            bands=tuple(obj["bands"]),
            phase=str(obj["phase"]),
            window=tuple(int(v) for v in window) if window else None,
            positive_class=int(obj["positive_class"]),
            negative_class=(
                None if obj.get("negative_class") is None else int(obj["negative_class"])
            ),
            csp_models={b: CspModel.from_json(m) for b, m in obj.get("csp", {}).items()},
            scaler=Standardizer.from_json(obj["scaler"]),
            svm=LinearSvmModel.from_json(obj["svm"]),
            cv=CvReport.from_json(obj["cv"]),
            sample_rate=float(obj["sample_rate"]),
            montage_hash=str(obj.get("montage_hash", "")),
        )


def _train_head(
    pipeline,
    kind: str,
    bands: tuple[str, ...],
    phase: str,
    window: tuple[int, int] | None,
    positive_class: int,
    negative_class: int | None,
    sample_rate: float,
    montage_hash: str,
    k: int,
    seed: int,
    c_grid: tuple[float, ...],
) -> FittedClassifier:
    report = kfold_cv(pipeline, k=k, seed=seed, c_grid=c_grid)
    all_idx = np.arange(len(pipeline.y))
    fitted = pipeline.fit(all_idx)
    scaler = fit_standardizer(fitted.features(all_idx))
    x = scaler.transform(fitted.features(all_idx))
    svm = train_linear_svm(x, pipeline.y, report.chosen_c)
    return FittedClassifier(
        kind=kind,
        bands=bands,
        phase=phase,
        window=window,
        positive_class=positive_class,
        negative_class=negative_class,
        csp_models=dict(getattr(fitted, "models", {})),
        scaler=scaler,
        svm=svm,
        cv=report,
        sample_rate=sample_rate,
        montage_hash=montage_hash,
    )


def train_fbcsp_binary(
    dataset: Dataset,
    class_a: int,
    class_b: int,
    bands: tuple[str, ...],
    phase: Phase | None,
    k: int = DEFAULT_FOLDS,
    seed: int = 0,
    c_grid: tuple[float, ...] = DEFAULT_C_GRID,
    cache=None,
    window: tuple[int, int] | None = None,
) -> FittedClassifier:
    """Train one band-filtered spatial-pattern decision head for a class pair."""
    pipeline = _features.FbcspPipeline(
        dataset, bands, phase=phase, window=window, class_a=class_a, class_b=class_b, cache=cache
    )
    return _train_head(
        pipeline,
        kind="fbcsp",
        bands=pipeline.bands,
        phase=phase.value if phase else "window",
        window=window,
        positive_class=class_a,
        negative_class=class_b,
        sample_rate=dataset.sample_rate,
        montage_hash=dataset.montage.content_hash(),
        k=k,
        seed=seed,
        c_grid=c_grid,
    )


def train_mrcp_binary(
    dataset: Dataset,
    class_a: int,
    class_b: int,
    k: int = DEFAULT_FOLDS,
    seed: int = 0,
    c_grid: tuple[float, ...] = DEFAULT_C_GRID,
    cache=None,
) -> FittedClassifier:
    """Train one slow-potential decision head for a class pair."""
    pipeline = _features.MrcpPipeline(dataset, class_a=class_a, class_b=class_b, cache=cache)
    return _train_head(
        pipeline,
        kind="mrcp",
        bands=(),
        phase="movement",
        window=None,
        positive_class=class_a,
        negative_class=class_b,
        sample_rate=dataset.sample_rate,
        montage_hash=dataset.montage.content_hash(),
        k=k,
        seed=seed,
        c_grid=c_grid,
    )


@dataclass
class OvrModel:
    """One-vs-rest multiclass classifier: one decision head per class.

    Prediction takes the head with the highest decision value; exact ties
    resolve to the lowest class label.
    """

    members: dict[int, FittedClassifier]

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.members))

    def scores(self, trial: Trial, preprocessed: np.ndarray | None = None) -> np.ndarray:
        return np.array(
            [self.members[c].decision(trial, preprocessed) for c in self.classes]
        )

    def predict(self, trial: Trial, preprocessed: np.ndarray | None = None) -> int:
        s = self.scores(trial, preprocessed)
        return self.classes[int(np.argmax(s))]

    def to_json(self) -> dict:
        return {
            "format_version": BUNDLE_FORMAT_VERSION,
            "kind": "ovr",
            "members": {str(c): m.to_json() for c, m in self.members.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OvrModel":
        if not isinstance(obj, dict) or "format_version" not in obj:
            raise DataError("model bundle lacks a format version")
        if obj["format_version"] != BUNDLE_FORMAT_VERSION:
            raise DataError(f"unknown bundle format version {obj['format_version']!r}")
        if obj.get("kind") != "ovr":
            raise DataError("not a one-vs-rest bundle")
        return cls(
            members={int(c): FittedClassifier.from_json(m) for c, m in obj["members"].items()}
        )


def train_ovr(
    dataset: Dataset,
    bands: tuple[str, ...],
    phase: Phase,
    k: int = DEFAULT_FOLDS,
    seed: int = 0,
    c_grid: tuple[float, ...] = DEFAULT_C_GRID,
    cache=None,
    kind: str = "fbcsp",
) -> OvrModel:
    """Train a one-vs-rest head per class present in the dataset."""
    if cache is None:
        cache = _features.FeatureCache(dataset)
    classes = dataset.classes()
    if len(classes) < 2:
        raise DataError("one-vs-rest training needs at least two classes")
    members = {}
    for cls_label in classes:
        if kind == "fbcsp":
            pipeline = _features.FbcspPipeline(
                dataset, bands, phase=phase, class_a=cls_label, class_b=None, cache=cache
            )
            head_bands: tuple[str, ...] = pipeline.bands
            head_phase = phase.value
        elif kind == "mrcp":
            pipeline = _features.MrcpPipeline(
                dataset, class_a=cls_label, class_b=None, cache=cache
            )
            head_bands = ()
            head_phase = "movement"
        else:
            raise ConfigError(f"unknown classifier kind {kind!r}")
        members[cls_label] = _train_head(
            pipeline,
            kind=kind,
            bands=head_bands,
            phase=head_phase,
            window=None,
            positive_class=cls_label,
            negative_class=None,
            sample_rate=dataset.sample_rate,
            montage_hash=dataset.montage.content_hash(),
            k=k,
            seed=seed,
            c_grid=c_grid,
        )
    return OvrModel(members=members)
