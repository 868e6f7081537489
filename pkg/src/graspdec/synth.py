"""Synthetic EEG generation with a known forward model.

Each trial is built as x(t) = sum_s a_s * pattern_s * src_s(t) * gate(t)
plus 1/f-weighted background noise.  Sources are band-limited Gaussian
processes (white noise, zero-phase band filtered, RMS-normalized over the
gate plateau); gates are raised-cosine-ramped phase windows.  The full
mixing model is recorded in a ground-truth sidecar that the decoding
pipeline never reads, so recovered patterns and accuracies can be checked
against what was actually planted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as _signal
from scipy import stats as _stats

from . import dsp as _dsp
from .core import (
    ChannelMontage,
    Dataset,
    Trial,
    atomic_write_text,
    default_montage,
    derive_seed,
)
from .csp import decode_array, encode_array
from .errors import ConfigError, DataError, NumericalError

GROUNDTRUTH_FORMAT_VERSION = 1

# Economy pinking cascade (pole-filtered white noise, ~ -3 dB/octave over
# the usable band); channelwise RMS is renormalized afterwards so only the
# spectral shape matters.
_PINK_B = (0.049922035, -0.095993537, 0.050612699, -0.004408786)
_PINK_A = (1.0, -2.494956002, 2.017265875, -0.522189400)

GATE_PHASES = ("planning", "movement", "both")


def focal_pattern(montage: ChannelMontage, focus: str, spread: float = 0.35) -> np.ndarray:
    """Unit-norm spatial pattern: Gaussian falloff around one electrode."""
    if spread <= 0:
        raise ConfigError("pattern spread must be positive")
    center = montage.positions[montage.index(focus)]
    d2 = np.sum((montage.positions - center) ** 2, axis=1)
    pat = np.exp(-d2 / (2.0 * spread**2))
    return pat / np.linalg.norm(pat)


@dataclass
class SourceSpec:
    """One planted source.

    Parameters
    ----------
    band : str
        Analysis band the source occupies.
    phase : str
        Gate window: "planning", "movement", or "both".
    amplitudes : dict
        Class label -> RMS amplitude over the gate plateau.  Missing
        classes get amplitude 0.
    pattern : ndarray, shape (n_channels,)
        Mixing column (scalp distribution).
    per_trial : bool
        True draws a fresh realization every trial (ongoing oscillatory
        activity); False freezes one realization shared by all trials
        (an evoked, deterministic deflection).
    """

    band: str
    phase: str
    amplitudes: dict[int, float]
    pattern: np.ndarray
    per_trial: bool = True
    name: str = ""

    def __post_init__(self):
        if self.band not in _dsp.BANDS:
            raise ConfigError(f"unknown source band {self.band!r}")
        if self.phase not in GATE_PHASES:
            raise ConfigError(f"source phase must be one of {GATE_PHASES}")
        self.pattern = np.asarray(self.pattern, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.pattern)) or not np.any(self.pattern):
            raise ConfigError("source pattern must be finite and non-zero")
        self.amplitudes = {int(k): float(v) for k, v in self.amplitudes.items()}
        for v in self.amplitudes.values():
            if v < 0 or not np.isfinite(v):
                raise ConfigError("source amplitudes must be finite and >= 0")


@dataclass
class SynthConfig:
    """Generator settings; defaults mirror the reach-and-grasp protocol."""

    sample_rate: float = 256.0
    trials_per_class: int = 75
    classes: tuple[int, ...] = (0, 1, 2)
    planning_s: float = 3.0
    movement_s: float = 2.75
    noise_rms: float = 1.0
    pink_fraction: float = 0.5
    ramp_s: float = 0.1
    sources: tuple[SourceSpec, ...] = ()
    subject_id: str = "synth"
    seed: int = 0
    montage: ChannelMontage = field(default_factory=default_montage)

    def __post_init__(self):
        if self.trials_per_class < 1:
            raise ConfigError("trials_per_class must be >= 1")
        if not self.classes or len(set(self.classes)) != len(self.classes):
            raise ConfigError("classes must be non-empty and unique")
        if self.noise_rms <= 0:
            raise ConfigError("noise_rms must be positive")
        if not (0.0 <= self.pink_fraction <= 1.0):
            raise ConfigError("pink_fraction must be in [0, 1]")
        if self.planning_s <= 0 or self.movement_s <= 0:
            raise ConfigError("phase durations must be positive")
        for src in self.sources:
            if src.pattern.shape != (self.montage.n_channels,):
                raise ConfigError(
                    f"source pattern length {src.pattern.shape} does not match montage"
                )


@dataclass
class SourceRecord:
    """Planted truth for one source: mixing column plus realizations."""

    name: str
    band: str
    phase: str
    per_trial: bool
    amplitudes: dict[int, float]
    pattern: np.ndarray
    realized_rms: np.ndarray
    realizations: list[np.ndarray]


@dataclass
class GroundTruth:
    """Sidecar record of everything the generator planted.

    Diagnostic only: the decoding pipeline must never read this.
    """

    sample_rate: float
    montage_hash: str
    labels: list[int]
    noise_rms: float
    pink_fraction: float
    sources: list[SourceRecord]


def _gate(
    n_samples: int, movement_onset: int, phase: str, ramp: int
) -> tuple[np.ndarray, slice]:
    """Raised-cosine gate for one phase window; returns (gate, plateau slice)."""
    if phase == "planning":
        a, b = 0, movement_onset
    elif phase == "movement":
        a, b = movement_onset, n_samples
    else:
        a, b = 0, n_samples
    if b - a <= 2 * ramp:
        raise ConfigError(
            f"{phase} window of {b - a} samples too short for {ramp}-sample ramps"
        )
    g = np.zeros(n_samples)
    up = 0.5 * (1.0 - np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp)) if ramp else np.empty(0)
    g[a : a + ramp] = up
    g[a + ramp : b - ramp] = 1.0
    g[b - ramp : b] = up[::-1]
    return g, slice(a + ramp, b - ramp)


def _unit_noise(rows: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(rows * rows, axis=-1, keepdims=True))
    if np.any(rms == 0.0):
        raise NumericalError("degenerate noise draw")
    return rows / rms


def generate_dataset(config: SynthConfig, seed: int | None = None) -> tuple[Dataset, GroundTruth]:
    """Generate a labeled dataset and its ground-truth sidecar.

    Deterministic for a fixed (config, seed): independent PCG64 streams
    per component, consumed in a fixed order.  Trial data is quantized to
    float32 precision at generation time so in-memory values match a
    save/load round trip bit for bit.  ``seed`` overrides ``config.seed``.
    """
    seed = config.seed if seed is None else seed
    fs = config.sample_rate
    n_ch = config.montage.n_channels
    n_plan = int(round(config.planning_s * fs))
    n_move = int(round(config.movement_s * fs))
    n_samples = n_plan + n_move
    movement_onset = n_plan
    ramp = int(round(config.ramp_s * fs))

    labels = [cls for _ in range(config.trials_per_class) for cls in config.classes]
    n_trials = len(labels)

    noise_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "noise")))
    source_rngs = [
        np.random.Generator(np.random.PCG64(derive_seed(seed, "source", str(i))))
        for i in range(len(config.sources))
    ]

    gates = {}
    for src in config.sources:
        if src.phase not in gates:
            gates[src.phase] = _gate(n_samples, movement_onset, src.phase, ramp)

    def draw_realization(src: SourceSpec, rng: np.random.Generator) -> np.ndarray:
        raw = rng.standard_normal(n_samples)
        filt = _dsp.zero_phase(raw, _dsp.band_filter(src.band, fs))
        plateau = gates[src.phase][1]
        rms = float(np.sqrt(np.mean(filt[plateau] ** 2)))
        if rms == 0.0:
            raise NumericalError("degenerate source draw")
        return filt / rms

    frozen: list[np.ndarray | None] = []
    for src, rng in zip(config.sources, source_rngs):
        frozen.append(None if src.per_trial else draw_realization(src, rng))

    records = [
        SourceRecord(
            name=src.name or f"source{i}",
            band=src.band,
            phase=src.phase,
            per_trial=src.per_trial,
            amplitudes=dict(src.amplitudes),
            pattern=src.pattern.copy(),
            realized_rms=np.zeros(n_trials),
            realizations=[],
        )
        for i, src in enumerate(config.sources)
    ]

    trials = []
    for t_idx, label in enumerate(labels):
        white = _unit_noise(noise_rng.standard_normal((n_ch, n_samples)))
        pink = _unit_noise(
            _signal.lfilter(
                _PINK_B, _PINK_A, noise_rng.standard_normal((n_ch, n_samples)), axis=-1
            )
        )
        x = config.noise_rms * (
            np.sqrt(1.0 - config.pink_fraction) * white
            + np.sqrt(config.pink_fraction) * pink
        )
        for s_idx, src in enumerate(config.sources):
            gate, plateau = gates[src.phase]
            unit = frozen[s_idx]
            if unit is None:
                unit = draw_realization(src, source_rngs[s_idx])
                records[s_idx].realizations.append(unit)
            elif t_idx == 0:
                records[s_idx].realizations.append(unit)
            amp = src.amplitudes.get(label, 0.0)
            sig = amp * unit * gate
            records[s_idx].realized_rms[t_idx] = float(np.sqrt(np.mean(sig[plateau] ** 2)))
            if amp != 0.0:
                x = x + np.outer(src.pattern, sig)
        # float32 quantization: saved payloads round-trip bit-exactly
        x = x.astype("<f4").astype(np.float64)
        trials.append(
            Trial(
                data=x,
                label=label,
                planning_onset=0,
                movement_onset=movement_onset,
                subject_id=config.subject_id,
            )
        )

    dataset = Dataset(montage=config.montage, sample_rate=fs, trials=trials)
    truth = GroundTruth(
        sample_rate=fs,
        montage_hash=config.montage.content_hash(),
        labels=list(labels),
        noise_rms=config.noise_rms,
        pink_fraction=config.pink_fraction,
        sources=records,
    )
    return dataset, truth


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    """Write the sidecar JSON (numeric arrays as base64 float64)."""
    obj = {
        "format_version": GROUNDTRUTH_FORMAT_VERSION,
        "sample_rate": truth.sample_rate,
        "montage_hash": truth.montage_hash,
        "labels": truth.labels,
        "noise_rms": truth.noise_rms,
        "pink_fraction": truth.pink_fraction,
        "sources": [
            {
                "name": rec.name,
                "band": rec.band,
                "phase": rec.phase,
                "per_trial": rec.per_trial,
                "amplitudes": {str(k): v for k, v in rec.amplitudes.items()},
                "pattern": rec.pattern.tolist(),
                "realized_rms": encode_array(rec.realized_rms),
                "n_trials": int(rec.realized_rms.shape[0]),
                "n_samples": int(rec.realizations[0].shape[0]) if rec.realizations else 0,
                "realizations": [encode_array(r) for r in rec.realizations],
            }
            for rec in truth.sources
        ],
    }
    atomic_write_text(Path(path), json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_ground_truth(path: str | Path) -> GroundTruth:
    """Read a sidecar written by save_ground_truth."""
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read ground truth: {exc}") from exc
    if obj.get("format_version") != GROUNDTRUTH_FORMAT_VERSION:
        raise DataError("unknown ground-truth format version")
    sources = []
    for rec in obj["sources"]:
        n_samples = int(rec["n_samples"])
        sources.append(
            SourceRecord(
                name=rec["name"],
                band=rec["band"],
                phase=rec["phase"],
                per_trial=bool(rec["per_trial"]),
                amplitudes={int(k): float(v) for k, v in rec["amplitudes"].items()},
                pattern=np.array(rec["pattern"], dtype=np.float64),
                realized_rms=decode_array(rec["realized_rms"], (int(rec["n_trials"]),)),
                realizations=[
                    decode_array(r, (n_samples,)) for r in rec["realizations"]
                ],
            )
        )
    return GroundTruth(
        sample_rate=float(obj["sample_rate"]),
        montage_hash=str(obj["montage_hash"]),
        labels=[int(v) for v in obj["labels"]],
        noise_rms=float(obj["noise_rms"]),
        pink_fraction=float(obj["pink_fraction"]),
        sources=sources,
    )


def chance_band(n_eval: int, n_classes: int = 2, alpha: float = 0.05) -> tuple[float, float]:
    """Two-sided exact binomial chance interval for accuracy under the null.

    Under label-independent guessing, accuracy over ``n_eval`` decisions is
    Binomial(n, 1/n_classes)/n; the band spans the alpha/2 and 1 - alpha/2
    quantiles.  The band tightens toward 1/n_classes as n grows.
    """
    if n_eval <= 0:
        raise ConfigError("n_eval must be positive")
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    if not (0.0 < alpha < 1.0):
        raise ConfigError("alpha must be in (0, 1)")
    p0 = 1.0 / n_classes
    lo = float(_stats.binom.ppf(alpha / 2.0, n_eval, p0)) / n_eval
    hi = float(_stats.binom.ppf(1.0 - alpha / 2.0, n_eval, p0)) / n_eval
    return lo, hi


def default_sources(montage: ChannelMontage) -> tuple[SourceSpec, ...]:
    """Demonstration source set reproducing the qualitative findings:
    planning-phase theta discrimination, movement-phase beta for grasp
    versus empty, and class-specific slow potentials over motor sites."""
    return (
        SourceSpec(
            band="theta",
            phase="planning",
            amplitudes={0: 1.1, 1: 0.45, 2: 0.0},
            pattern=focal_pattern(montage, "Pz", 0.5),
            per_trial=True,
            name="theta-planning",
        ),
        SourceSpec(
            band="beta",
            phase="movement",
            amplitudes={0: 1.0, 1: 0.85, 2: 0.0},
            pattern=focal_pattern(montage, "C3", 0.45),
            per_trial=True,
            name="beta-movement",
        ),
        SourceSpec(
            band="alpha",
            phase="both",
            amplitudes={0: 0.7, 1: 0.7, 2: 0.7},
            pattern=focal_pattern(montage, "Oz", 0.5),
            per_trial=True,
            name="alpha-background",
        ),
        SourceSpec(
            band="delta",
            phase="movement",
            amplitudes={0: 1.2},
            pattern=focal_pattern(montage, "C3", 0.4),
            per_trial=False,
            name="slow-pen",
        ),
        SourceSpec(
            band="delta",
            phase="movement",
            amplitudes={1: 1.2},
            pattern=focal_pattern(montage, "Cz", 0.4),
            per_trial=False,
            name="slow-bottle",
        ),
        SourceSpec(
            band="delta",
            phase="movement",
            amplitudes={2: 0.6},
            pattern=focal_pattern(montage, "C4", 0.4),
            per_trial=False,
            name="slow-empty",
        ),
    )


def default_config(montage: ChannelMontage | None = None, **overrides) -> SynthConfig:
    """Paper-scale default generator configuration."""
    montage = montage or default_montage()
    return SynthConfig(montage=montage, sources=default_sources(montage), **overrides)


def config_from_json(obj: dict, montage: ChannelMontage | None = None) -> SynthConfig:
    """Build a SynthConfig from a plain-JSON dict (the CLI config format).

    Source patterns are either explicit lists or ``{"focus": name,
    "spread": s}`` descriptors resolved against the montage.
    """
    if not isinstance(obj, dict):
        raise ConfigError("synth config must be an object")
    montage = montage or default_montage()
    kwargs: dict = {}
    for key in (
        "sample_rate",
        "trials_per_class",
        "planning_s",
        "movement_s",
        "noise_rms",
        "pink_fraction",
        "ramp_s",
        "subject_id",
        "seed",
    ):
        if key in obj:
            kwargs[key] = obj[key]
    if "classes" in obj:
        kwargs["classes"] = tuple(int(c) for c in obj["classes"])
    sources = []
    for i, rec in enumerate(obj.get("sources", [])):
        try:
            pat = rec["pattern"]
            if isinstance(pat, dict):
                pattern = focal_pattern(montage, pat["focus"], float(pat.get("spread", 0.35)))
            else:
                pattern = np.asarray(pat, dtype=np.float64)
            sources.append(
                SourceSpec(
                    band=rec["band"],
                    phase=rec["phase"],
                    amplitudes={int(k): float(v) for k, v in rec["amplitudes"].items()},
                    pattern=pattern,
                    per_trial=bool(rec.get("per_trial", True)),
                    name=str(rec.get("name", f"source{i}")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad source spec #{i}: {exc}") from exc
    if sources or "sources" in obj:
        kwargs["sources"] = tuple(sources)
    else:
        kwargs["sources"] = default_sources(montage)
    try:
        return SynthConfig(montage=montage, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc
