"""Epoched EEG data model: montage, trials, datasets, splits, serialization.

A dataset is a directory holding ``manifest.json`` plus one payload file per
trial.  Payloads are raw little-endian float32, channels x samples in row-major
order; everything numerical in the package runs in float64 and narrows only at
save time.  Trials may alternatively be imported from CSV (one file per trial,
header row naming the channels).
"""

from __future__ import annotations

import csv as _csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

FORMAT_VERSION = 1

CLASS_NAMES = {0: "pen", 1: "bottle", 2: "empty"}
CLASS_IDS = {name: label for label, name in CLASS_NAMES.items()}

# 16-channel 10-20 subset.  2-D positions come from an azimuthal equidistant
# projection of the standard spherical layout onto the unit head circle
# (x = right ear, y = nose); all radii must stay within 1.05.
DEFAULT_CHANNELS: tuple[tuple[str, float, float], ...] = (
    ("FP1", -0.309, 0.951),
    ("FP2", 0.309, 0.951),
    ("F3", -0.407, 0.485),
    ("Fz", 0.0, 0.5),
    ("F4", 0.407, 0.485),
    ("C3", -0.5, 0.0),
    ("Cz", 0.0, 0.0),
    ("C4", 0.5, 0.0),
    ("P3", -0.407, -0.485),
    ("Pz", 0.0, -0.5),
    ("P4", 0.407, -0.485),
    ("PO7", -0.588, -0.809),
    ("PO8", 0.588, -0.809),
    ("Oz", 0.0, -1.0),
    ("O1", -0.309, -0.951),
    ("O2", 0.309, -0.951),
)

MAX_HEAD_RADIUS = 1.05


class Phase(Enum):
    """Trial epoch of interest: motor planning or movement execution."""

    PLANNING = "planning"
    MOVEMENT = "movement"


@dataclass(frozen=True)
class ChannelMontage:
    """Ordered channel names with 2-D head-surface positions.

    Parameters
    ----------
    names : tuple of str
        Channel labels, unique, in recording order.
    positions : ndarray, shape (n_channels, 2)
        Projected (x, y) coordinates, radius <= 1.05.
    """

    names: tuple[str, ...]
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        if len(self.names) == 0:
            raise DataError("montage must contain at least one channel")
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate channel names in montage")
        if pos.shape != (len(self.names), 2):
            raise DataError(
                f"positions shape {pos.shape} does not match {len(self.names)} channels"
            )
        radii = np.hypot(pos[:, 0], pos[:, 1])
        if np.any(radii > MAX_HEAD_RADIUS):
            raise DataError("channel position outside head radius 1.05")

    @property
    def n_channels(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"channel {name!r} not in montage") from None

    def content_hash(self) -> str:
        """Stable hex digest of names and positions, for model/montage pairing."""
        payload = json.dumps(
            {"names": list(self.names), "positions": self.positions.tolist()},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def default_montage() -> ChannelMontage:
    """The built-in 16-channel 10-20 montage used by the synthetic generator."""
    names = tuple(c[0] for c in DEFAULT_CHANNELS)
    positions = np.array([[c[1], c[2]] for c in DEFAULT_CHANNELS])
    return ChannelMontage(names=names, positions=positions)


@dataclass
class Trial:
    """One epoched trial.

    Parameters
    ----------
    data : ndarray, shape (n_channels, n_samples)
        Float64 samples.
    label : int
        Object class: 0 = pen, 1 = bottle, 2 = empty.
    planning_onset : int
        Sample index where the planning epoch starts.
    movement_onset : int
        Sample index where movement starts; planning runs up to here,
        movement to the end of the trial.
    subject_id : str
        Opaque recording identifier.
    """

    data: np.ndarray
    label: int
    planning_onset: int
    movement_onset: int
    subject_id: str = "unknown"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError("trial data must be 2-D (channels x samples)")
        if not np.all(np.isfinite(self.data)):
            raise DataError("trial contains non-finite samples")
        if self.label not in CLASS_NAMES:
            raise DataError(f"unknown class label {self.label}")
        n = self.data.shape[1]
        if not (0 <= self.planning_onset < self.movement_onset <= n):
            raise DataError(
                f"invalid onsets ({self.planning_onset}, {self.movement_onset}) "
                f"for trial of {n} samples"
            )

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class Dataset:
    """An immutable-by-convention collection of trials sharing one montage.

    All trials must have the montage's channel count.  Mutate only by
    constructing a new Dataset.
    """

    montage: ChannelMontage
    sample_rate: float
    trials: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        if not np.isfinite(self.sample_rate) or self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate}")
        for i, t in enumerate(self.trials):
            if t.data.shape[0] != self.montage.n_channels:
                raise DataError(
                    f"trial {i} has {t.data.shape[0]} channels, "
                    f"montage has {self.montage.n_channels}"
                )

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    def classes(self) -> list[int]:
        return sorted({t.label for t in self.trials})


def segment_phase(trial: Trial, phase: Phase) -> np.ndarray:
    """Slice the planning or movement block out of a trial.

    Planning is ``[planning_onset, movement_onset)``; movement is
    ``[movement_onset, n_samples)``.  Raises DataError if the block is empty.
    """
    if phase is Phase.PLANNING:
        block = trial.data[:, trial.planning_onset : trial.movement_onset]
    elif phase is Phase.MOVEMENT:
        block = trial.data[:, trial.movement_onset :]
    else:
        raise ConfigError(f"unknown phase {phase!r}")
    if block.shape[1] == 0:
        raise DataError(f"empty {phase.value} block")
    return block


def derive_seed(seed: int, *names: str) -> int:
    """Derive a component sub-seed by hashing the master seed with a name path.

    SHA-256 over ``"<seed>/<name>/.../<name>"``, first 8 bytes big-endian.
    Keeps per-component random streams independent and reproducible.
    """
    text = "/".join([str(int(seed))] + list(names))
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def split_train_test(ds: Dataset, test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split with a reproducible permutation.

    For each class (ascending label order) the trial indices are permuted
    with numpy's PCG64 generator seeded from ``seed``, then the first
    ``test_per_class`` go to the test set and the rest to training.  Trials
    keep their original relative order inside each output dataset.

    Raises
    ------
    DataError
        If any class has fewer than ``test_per_class + 1`` trials.
    ConfigError
        If ``test_per_class`` is negative.
    """
    if test_per_class < 0:
        raise ConfigError("test_per_class must be >= 0")
    labels = ds.labels
    test_idx: set[int] = set()
    rng = np.random.Generator(np.random.PCG64(seed))
    for cls in ds.classes():
        cls_idx = np.flatnonzero(labels == cls)
        if len(cls_idx) <= test_per_class:
            raise DataError(
                f"class {cls} has {len(cls_idx)} trials, "
                f"need more than test_per_class={test_per_class}"
            )
        perm = rng.permutation(len(cls_idx))
        test_idx.update(int(cls_idx[i]) for i in perm[:test_per_class])
    train = [t for i, t in enumerate(ds.trials) if i not in test_idx]
    test = [t for i, t in enumerate(ds.trials) if i in test_idx]
    return (
        Dataset(montage=ds.montage, sample_rate=ds.sample_rate, trials=train),
        Dataset(montage=ds.montage, sample_rate=ds.sample_rate, trials=test),
    )


def atomic_write_bytes(path: str | Path, payload: bytes) -> Path:
    """Write bytes via a temp file + rename so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    return path


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode())


def _json_dump(obj, path: Path) -> None:
    # sort_keys + fixed separators so identical content gives identical bytes
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    """Write a dataset directory: manifest.json plus one .f32 payload per trial.

    Payloads are float32 little-endian, row-major (channel-major).  Saving the
    same dataset twice produces byte-identical files.

    Returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, t in enumerate(ds.trials):
        fname = f"trial_{i:04d}.f32"
        payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        atomic_write_bytes(out / fname, payload)
        records.append(
            {
                "file": fname,
                "label": int(t.label),
                "n_samples": int(t.n_samples),
                "planning_onset": int(t.planning_onset),
                "movement_onset": int(t.movement_onset),
                "subject_id": t.subject_id,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "sample_rate": float(ds.sample_rate),
        "montage": {
            "names": list(ds.montage.names),
            "positions": ds.montage.positions.tolist(),
        },
        "trials": records,
    }
    path = out / "manifest.json"
    _json_dump(manifest, path)
    return path


def _read_payload(path: Path, n_channels: int, n_samples: int) -> np.ndarray:
    raw = path.read_bytes()
    expected = n_channels * n_samples * 4
    if len(raw) != expected:
        raise DataError(
            f"payload {path.name}: {len(raw)} bytes, expected {expected}"
        )
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return flat.reshape(n_channels, n_samples)


def _read_csv_trial(path: Path, names: tuple[str, ...]) -> np.ndarray:
    """CSV import: header row = channel names, one sample per data row."""
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty CSV") from None
        header = [h.strip() for h in header]
        if tuple(header) != names:
            raise DataError(
                f"{path.name}: CSV channels {header} do not match montage"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(f"{path.name}:{lineno}: wrong column count")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: non-numeric sample") from None
    if not rows:
        raise DataError(f"{path.name}: CSV has no samples")
    return np.array(rows, dtype=np.float64).T


def load_dataset(in_dir: str | Path) -> Dataset:
    """Load a dataset directory written by save_dataset (or CSV payloads).

    Payload files ending in ``.csv`` are parsed as one-trial CSV exports;
    anything else is treated as a raw float32 payload.

    Raises DataError on malformed manifests, shape mismatches, unknown
    format versions, or non-finite samples.
    """
    in_dir = Path(in_dir)
    mpath = in_dir / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no manifest.json in {in_dir}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest: {exc}") from exc
    if not isinstance(manifest, dict):
        raise DataError("manifest root must be an object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"unknown format version {version!r}")
    try:
        rate = float(manifest["sample_rate"])
        mont = manifest["montage"]
        montage = ChannelMontage(
            names=tuple(mont["names"]),
            positions=np.array(mont["positions"], dtype=np.float64),
        )
        records = manifest["trials"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest: missing field {exc}") from exc
    trials = []
    for rec in records:
        try:
            fname = rec["file"]
            label = int(rec["label"])
            planning_onset = int(rec["planning_onset"])
            movement_onset = int(rec["movement_onset"])
            subject_id = str(rec.get("subject_id", "unknown"))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed trial record: {exc}") from exc
        fpath = in_dir / fname
        if not fpath.is_file():
            raise DataError(f"missing payload {fname}")
        if fpath.suffix.lower() == ".csv":
            data = _read_csv_trial(fpath, montage.names)
        else:
            if "n_samples" not in rec:
                raise DataError(f"trial record {fname} lacks n_samples")
            data = _read_payload(fpath, montage.n_channels, int(rec["n_samples"]))
        trials.append(
            Trial(
                data=data,
                label=label,
                planning_onset=planning_onset,
                movement_onset=movement_onset,
                subject_id=subject_id,
            )
        )
    return Dataset(montage=montage, sample_rate=rate, trials=trials)
