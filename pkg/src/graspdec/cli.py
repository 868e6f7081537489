"""Command-line interface: generate, split, train, evaluate, analyze, export.

Every command writes its artifacts into ``--out`` and finishes with a
``run.json`` manifest listing each written file with its SHA-256, so
identical configs and seeds are verifiable byte for byte.  Exit codes:
0 success, 2 usage/config error, 3 data error, 4 numerical failure.
Diagnostics go to stderr; stdout carries only result summaries.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis as _analysis
from . import dsp as _dsp
from . import synth as _synth
from .core import (
    CLASS_NAMES,
    Dataset,
    Phase,
    atomic_write_text,
    derive_seed,
    load_dataset,
    save_dataset,
)
from .csp import csp_patterns
from .errors import ConfigError, DataError, GraspdecError, NumericalError
from .features import FeatureCache, MrcpPipeline
from .ml import (
    DEFAULT_C_GRID,
    DEFAULT_FOLDS,
    FittedClassifier,
    OvrModel,
    accuracy,
    confusion_matrix,
    scenario_name,
    train_fbcsp_binary,
    train_mrcp_binary,
    train_ovr,
)

RUN_FORMAT_VERSION = 1

_BINARY_PAIRS = ((0, 1), (0, 2), (1, 2))
_SCENARIO_NAMES = tuple(scenario_name(a, b) for a, b in _BINARY_PAIRS)
_SCENARIO_PAIRS = dict(zip(_SCENARIO_NAMES, _BINARY_PAIRS))
_PHASE_NAMES = ("planning", "movement")


def _fmt(v: float) -> str:
    return repr(float(v))


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------


class RunWriter:
    """Collects every artifact written under one output directory.

    ``finish`` writes ``run.json`` last: command, seed, path-free params,
    and the sorted list of relative paths with SHA-256 content hashes.
    Paths and timestamps never enter the manifest, so identical configs
    and seeds reproduce it byte for byte.
    """

    def __init__(self, out_dir: str | Path):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._files: dict[str, tuple[str, int]] = {}

    def _record(self, path: Path) -> None:
        payload = path.read_bytes()
        rel = path.relative_to(self.out).as_posix()
        self._files[rel] = (hashlib.sha256(payload).hexdigest(), len(payload))

    def write_text(self, rel: str, text: str) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(path, text)
        self._record(path)
        return path

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def add_file(self, path: str | Path) -> None:
        self._record(Path(path))

    def add_tree(self, root: str | Path) -> None:
        for p in sorted(Path(root).rglob("*")):
            if p.is_file():
                self._record(p)

    def finish(self, command: str, seed: int, params: dict) -> Path:
        manifest = {
            "format_version": RUN_FORMAT_VERSION,
            "command": command,
            "seed": int(seed),
            "params": params,
            "files": [
                {"path": rel, "sha256": sha, "bytes": size}
                for rel, (sha, size) in sorted(self._files.items())
            ],
        }
        path = self.out / "run.json"
        atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return path


# ---------------------------------------------------------------------------
# Config / flag resolution
# ---------------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def _get(args: argparse.Namespace, cfg: dict, key: str, default):
    """Flag value wins; else config-file value; else default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in cfg:
        return cfg[key]
    return default


def _resolve_seed(args, cfg) -> int:
    try:
        return int(_get(args, cfg, "seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None


def _resolve_out(args, cfg) -> Path:
    return Path(_get(args, cfg, "out", "out"))


def _resolve_jobs(args, cfg) -> int:
    jobs = _get(args, cfg, "jobs", None)
    if jobs is None:
        jobs = os.cpu_count() or 1
    jobs = int(jobs)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return jobs


def _existing_dir(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing {what} path")
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} path does not exist: {p}")
    return p


def _parse_bands(text) -> tuple[str, ...]:
    if text is None or text == "all":
        return _dsp.BAND_ORDER
    if isinstance(text, (list, tuple)):
        names = [str(b) for b in text]
    else:
        names = [b.strip() for b in str(text).split(",") if b.strip()]
    for b in names:
        if b not in _dsp.BANDS:
            raise ConfigError(f"unknown band {b!r}; expected one of {_dsp.BAND_ORDER}")
    if not names or len(set(names)) != len(names):
        raise ConfigError("band list must be non-empty and unique")
    return tuple(b for b in _dsp.BAND_ORDER if b in names)


def _parse_scenarios(text) -> tuple[str, ...]:
    allowed = _SCENARIO_NAMES + ("multiclass",)
    if text is None or text == "all":
        return allowed
    if isinstance(text, (list, tuple)):
        names = [str(s) for s in text]
    else:
        names = [s.strip() for s in str(text).split(",") if s.strip()]
    for s in names:
        if s not in allowed:
            raise ConfigError(f"unknown scenario {s!r}; expected one of {allowed}")
    if not names:
        raise ConfigError("scenario list must be non-empty")
    return tuple(dict.fromkeys(names))


def _parse_phases(text) -> tuple[Phase, ...]:
    if text is None or text == "all":
        names = list(_PHASE_NAMES)
    elif isinstance(text, (list, tuple)):
        names = [str(p) for p in text]
    else:
        names = [p.strip() for p in str(text).split(",") if p.strip()]
    phases = []
    for n in names:
        if n not in _PHASE_NAMES:
            raise ConfigError(f"unknown phase {n!r}; expected planning or movement")
        phases.append(Phase(n))
    if not phases:
        raise ConfigError("phase list must be non-empty")
    return tuple(dict.fromkeys(phases))


def _parse_c_grid(value) -> tuple[float, ...]:
    if value is None:
        return DEFAULT_C_GRID
    if isinstance(value, (list, tuple)):
        vals = [float(v) for v in value]
    else:
        try:
            vals = [float(v) for v in str(value).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad penalty grid {value!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError("penalty grid values must be positive")
    return tuple(vals)


def _parse_components(value) -> tuple[int, ...]:
    if value is None:
        return (1, 2, 3)
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in str(value).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad component list {value!r}") from None


# ---------------------------------------------------------------------------
# synth / split
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    synth_cfg_obj = cfg.get("synth", {})
    if not isinstance(synth_cfg_obj, dict):
        raise ConfigError("config key 'synth' must be an object")
    config = _synth.config_from_json(synth_cfg_obj)
    overrides = {}
    if args.trials_per_class is not None:
        overrides["trials_per_class"] = int(args.trials_per_class)
    if args.noise_rms is not None:
        overrides["noise_rms"] = float(args.noise_rms)
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    dataset, truth = _synth.generate_dataset(config, seed)
    writer = RunWriter(out)
    data_dir = writer.out / "data"
    save_dataset(dataset, data_dir)
    _synth.save_ground_truth(truth, data_dir / "groundtruth.json")
    writer.add_tree(data_dir)
    writer.finish(
        "synth",
        seed,
        {
            "classes": [int(c) for c in config.classes],
            "trials_per_class": int(config.trials_per_class),
            "sample_rate": float(config.sample_rate),
            "noise_rms": float(config.noise_rms),
            "pink_fraction": float(config.pink_fraction),
            "n_sources": len(config.sources),
        },
    )
    n = len(dataset)
    print(
        f"generated {n} trials ({config.trials_per_class} x {len(config.classes)} "
        f"classes) at {config.sample_rate:g} Hz"
    )
    print(
        f"noise rms {config.noise_rms:g}, pink fraction {config.pink_fraction:g}"
    )
    for src in config.sources:
        amps = ", ".join(
            f"{CLASS_NAMES.get(c, c)}={a:g}" for c, a in sorted(src.amplitudes.items())
        )
        print(f"source {src.name}: {src.band} band, {src.phase} gate, rms {amps}")
    print(f"wrote dataset to {data_dir}")
    return 0


def cmd_split(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    test_per_class = int(_get(args, cfg, "test_per_class", 15))
    dataset = load_dataset(data_dir)
    train, test = _split_with_subseed(dataset, test_per_class, seed)
    writer = RunWriter(out)
    save_dataset(train, writer.out / "train")
    save_dataset(test, writer.out / "test")
    writer.add_tree(writer.out / "train")
    writer.add_tree(writer.out / "test")
    writer.finish("split", seed, {"test_per_class": test_per_class})
    print(
        f"split {len(dataset)} trials into {len(train)} train / {len(test)} test "
        f"({test_per_class} per class held out)"
    )
    return 0


def _split_with_subseed(dataset: Dataset, test_per_class: int, seed: int):
    from .core import split_train_test

    return split_train_test(dataset, test_per_class, derive_seed(seed, "split"))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_tasks(
    scenarios: tuple[str, ...],
    bands: tuple[str, ...],
    phases: tuple[Phase, ...],
    k: int,
    c_grid: tuple[float, ...],
    seed: int,
) -> list[dict]:
    """Canonically ordered bundle specs for one training sweep."""
    tasks = []

    def add(name: str, **kw):
        tasks.append(
            dict(name=name, seed=derive_seed(seed, "cv", name), k=k, c_grid=c_grid, **kw)
        )

    binary = [s for s in scenarios if s != "multiclass"]
    for scen in binary:
        a, b = _SCENARIO_PAIRS[scen]
        for band in bands:
            for phase in phases:
                add(
                    f"fbcsp_{scen}_{band}_{phase.value}",
                    kind="binary",
                    class_a=a,
                    class_b=b,
                    bands=(band,),
                    band_tag=band,
                    phase=phase.value,
                    scenario=scen,
                )
    if len(bands) >= 2:
        for scen in binary:
            a, b = _SCENARIO_PAIRS[scen]
            for phase in phases:
                add(
                    f"fbcsp_{scen}_broadband_{phase.value}",
                    kind="binary",
                    class_a=a,
                    class_b=b,
                    bands=bands,
                    band_tag="broadband",
                    phase=phase.value,
                    scenario=scen,
                )
    if "multiclass" in scenarios:
        band_sets = [(band, (band,)) for band in bands]
        if len(bands) >= 2:
            band_sets.append(("broadband", bands))
        for tag, bset in band_sets:
            for phase in phases:
                add(
                    f"ovr_{tag}_{phase.value}",
                    kind="ovr",
                    bands=bset,
                    band_tag=tag,
                    phase=phase.value,
                    scenario="multiclass",
                )
    return tasks


def _run_bundle_task(dataset: Dataset, cache: FeatureCache, task: dict):
    """Train one bundle; returns (name, bundle json dict, summary rows)."""
    phase = Phase(task["phase"])
    if task["kind"] == "binary":
        model = train_fbcsp_binary(
            dataset,
            task["class_a"],
            task["class_b"],
            task["bands"],
            phase,
            k=task["k"],
            seed=task["seed"],
            c_grid=task["c_grid"],
            cache=cache,
        )
        rows = [
            {
                "bundle": task["name"],
                "scenario": task["scenario"],
                "band": task["band_tag"],
                "phase": task["phase"],
                "kind": "fbcsp",
                "mean_acc": model.cv.mean_accuracy,
                "std_acc": model.cv.std_accuracy,
                "chosen_c": model.cv.chosen_c,
            }
        ]
        return task["name"], model.to_json(), rows
    ovr = train_ovr(
        dataset,
        task["bands"],
        phase,
        k=task["k"],
        seed=task["seed"],
        c_grid=task["c_grid"],
        cache=cache,
    )
    rows = [
        {
            "bundle": task["name"],
            "scenario": ovr.members[c].scenario,
            "band": task["band_tag"],
            "phase": task["phase"],
            "kind": "ovr",
            "mean_acc": ovr.members[c].cv.mean_accuracy,
            "std_acc": ovr.members[c].cv.std_accuracy,
            "chosen_c": ovr.members[c].cv.chosen_c,
        }
        for c in ovr.classes
    ]
    return task["name"], ovr.to_json(), rows


_WORKER: dict = {}


def _worker_init(dataset_dir: str) -> None:
    ds = load_dataset(dataset_dir)
    _WORKER["dataset"] = ds
    _WORKER["cache"] = FeatureCache(ds)


def _worker_train(task: dict):
    return _run_bundle_task(_WORKER["dataset"], _WORKER["cache"], task)


def cmd_train(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    jobs = _resolve_jobs(args, cfg)
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    bands = _parse_bands(_get(args, cfg, "bands", None))
    scenarios = _parse_scenarios(_get(args, cfg, "scenarios", None))
    phases = _parse_phases(_get(args, cfg, "phases", None))
    k = int(_get(args, cfg, "k", DEFAULT_FOLDS))
    c_grid = _parse_c_grid(_get(args, cfg, "c_grid", None))

    tasks = _train_tasks(scenarios, bands, phases, k, c_grid, seed)
    writer = RunWriter(out)
    results = []
    if jobs == 1 or len(tasks) <= 1:
        dataset = load_dataset(data_dir)
        cache = FeatureCache(dataset)
        # one filtering pass per (trial, band) serves the whole sweep
        cache.ensure_covariances(bands, [("phase", p.value) for p in phases])
        for task in tasks:
            results.append(_run_bundle_task(dataset, cache, task))
    else:
        with ProcessPoolExecutor(
            max_workers=min(jobs, len(tasks)),
            initializer=_worker_init,
            initargs=(str(data_dir),),
        ) as pool:
            results = list(pool.map(_worker_train, tasks))

    summary_rows = []
    for name, bundle, rows in results:
        writer.write_json(f"{name}.json", bundle)
        summary_rows.extend(rows)
    lines = ["bundle,scenario,band,phase,kind,mean_acc,std_acc,chosen_c"]
    for r in summary_rows:
        lines.append(
            f"{r['bundle']},{r['scenario']},{r['band']},{r['phase']},{r['kind']},"
            f"{_fmt(r['mean_acc'])},{_fmt(r['std_acc'])},{_fmt(r['chosen_c'])}"
        )
    writer.write_text("cv_summary.csv", "\n".join(lines) + "\n")
    writer.finish(
        "train",
        seed,
        {
            "bands": list(bands),
            "scenarios": list(scenarios),
            "phases": [p.value for p in phases],
            "k": k,
            "c_grid": list(c_grid),
            "n_bundles": len(tasks),
        },
    )
    for r in summary_rows:
        print(
            f"{r['bundle']} [{r['scenario']}]: cv {r['mean_acc']:.3f} "
            f"+/- {r['std_acc']:.3f} (C={r['chosen_c']:g})"
        )
    print(f"trained {len(tasks)} bundles into {writer.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_bundles(models_dir: Path) -> dict[str, object]:
    """Load every model bundle JSON in a directory, keyed by stem."""
    bundles: dict[str, object] = {}
    for path in sorted(models_dir.glob("*.json")):
        if path.name in ("run.json", "cv_summary.csv"):
            continue
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed bundle {path.name}: {exc}") from exc
        if not isinstance(obj, dict) or "format_version" not in obj:
            continue
        if obj.get("kind") == "ovr":
            bundles[path.stem] = OvrModel.from_json(obj)
        else:
            bundles[path.stem] = FittedClassifier.from_json(obj)
    if not bundles:
        raise ConfigError(f"no model bundles found in {models_dir}")
    return bundles


def _check_montage(montage_hash: str, dataset: Dataset, name: str) -> None:
    if montage_hash and montage_hash != dataset.montage.content_hash():
        raise DataError(f"bundle {name} was fitted on a different montage")


def _eval_bundle(name: str, model, dataset: Dataset, pre: dict[int, np.ndarray]) -> dict:
    labels = dataset.labels
    if isinstance(model, OvrModel):
        for c in model.classes:
            _check_montage(model.members[c].montage_hash, dataset, name)
        preds = np.array(
            [model.predict(t, preprocessed=pre[i]) for i, t in enumerate(dataset.trials)]
        )
        acc = accuracy(labels, preds)
        classes = tuple(dataset.classes())
        conf = confusion_matrix(labels, preds, classes)
        lo, hi = _synth.chance_band(len(labels), n_classes=len(classes))
        return {
            "kind": "ovr",
            "scenario": "multiclass",
            "n": int(len(labels)),
            "accuracy": acc,
            "confusion_classes": [int(c) for c in classes],
            "confusion": conf.tolist(),
            "chance_low": lo,
            "chance_high": hi,
        }
    _check_montage(model.montage_hash, dataset, name)
    keep = np.flatnonzero(
        (labels == model.positive_class) | (labels == model.negative_class)
    )
    if keep.size == 0:
        raise DataError(f"test set has no trials for {model.scenario}")
    preds = np.array([model.predict(dataset.trials[i], preprocessed=pre[i]) for i in keep])
    acc = accuracy(labels[keep], preds)
    lo, hi = _synth.chance_band(keep.size, n_classes=2)
    return {
        "kind": model.kind,
        "scenario": model.scenario,
        "n": int(keep.size),
        "accuracy": acc,
        "chance_low": lo,
        "chance_high": hi,
    }


def _band_tag_of(name: str) -> str:
    for tag in _dsp.BAND_ORDER + ("broadband",):
        if f"_{tag}_" in name:
            return tag
    return ""


def _eval_tables(metrics: dict[str, dict]) -> dict[str, str]:
    """Per-phase accuracy tables: rows = scenarios, columns = bands."""
    cols = list(_dsp.BAND_ORDER) + ["broadband"]
    rows = list(_SCENARIO_NAMES) + ["multiclass"]
    tables = {}
    for phase in _PHASE_NAMES:
        cells: dict[tuple[str, str], float] = {}
        for name, m in metrics.items():
            if not name.endswith(f"_{phase}"):
                continue
            tag = _band_tag_of(name)
            if tag:
                cells[(m["scenario"], tag)] = m["accuracy"]
        if not cells:
            continue
        lines = ["scenario," + ",".join(cols)]
        for scen in rows:
            if not any(key[0] == scen for key in cells):
                continue
            vals = [
                _fmt(cells[(scen, c)]) if (scen, c) in cells else "" for c in cols
            ]
            lines.append(scen + "," + ",".join(vals))
        tables[f"eval_table_{phase}.csv"] = "\n".join(lines) + "\n"
    return tables


def cmd_eval(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    models_dir = _existing_dir(_get(args, cfg, "models", None), "models")
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    dataset = load_dataset(data_dir)
    bundles = _load_bundles(models_dir)
    fs = dataset.sample_rate
    pre = {i: _dsp.preprocess(t.data, fs) for i, t in enumerate(dataset.trials)}
    metrics = {
        name: _eval_bundle(name, model, dataset, pre)
        for name, model in sorted(bundles.items())
    }
    writer = RunWriter(out)
    writer.write_json("metrics.json", metrics)
    for fname, text in _eval_tables(metrics).items():
        writer.write_text(fname, text)
    writer.finish("eval", seed, {"n_bundles": len(bundles), "n_trials": len(dataset)})
    for name in sorted(metrics):
        m = metrics[name]
        print(
            f"{name} [{m['scenario']}]: accuracy {m['accuracy']:.3f} "
            f"on {m['n']} trials (chance band {m['chance_low']:.3f}-{m['chance_high']:.3f})"
        )
    print(f"evaluated {len(bundles)} bundles on {len(dataset)} trials")
    return 0


# ---------------------------------------------------------------------------
# mrcp
# ---------------------------------------------------------------------------


def cmd_mrcp(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    test_dir = _get(args, cfg, "test", None)
    k = int(_get(args, cfg, "k", DEFAULT_FOLDS))
    c_grid = _parse_c_grid(_get(args, cfg, "c_grid", None))
    channels_arg = _get(args, cfg, "channels", "C3,Cz,C4")
    if isinstance(channels_arg, (list, tuple)):
        channels = [str(c) for c in channels_arg]
    else:
        channels = [c.strip() for c in str(channels_arg).split(",") if c.strip()]
    if not channels:
        raise ConfigError("channel list must be non-empty")

    dataset = load_dataset(data_dir)
    for ch in channels:
        dataset.montage.index(ch)  # raises DataError for unknown names
    cache = FeatureCache(dataset)
    writer = RunWriter(out)
    models: dict[str, FittedClassifier] = {}
    for scen in _SCENARIO_NAMES:
        a, b = _SCENARIO_PAIRS[scen]
        name = f"mrcp_{scen}"
        model = train_mrcp_binary(
            dataset, a, b, k=k, seed=derive_seed(seed, "cv", name), c_grid=c_grid, cache=cache
        )
        models[name] = model
        writer.write_json(f"{name}.json", model.to_json())

    metrics: dict[str, dict] = {
        name: {
            "scenario": m.scenario,
            "cv_mean": m.cv.mean_accuracy,
            "cv_std": m.cv.std_accuracy,
            "chosen_c": m.cv.chosen_c,
        }
        for name, m in models.items()
    }
    if test_dir is not None:
        test = load_dataset(_existing_dir(test_dir, "test dataset"))
        fs = test.sample_rate
        pre = {i: _dsp.preprocess(t.data, fs) for i, t in enumerate(test.trials)}
        for name, m in models.items():
            metrics[name].update(_eval_bundle(name, m, test, pre))
    writer.write_json("mrcp_metrics.json", metrics)

    curves = _analysis.class_waveforms(dataset, cache=cache)
    onset = dataset.trials[0].movement_onset
    for ch in channels:
        ci = dataset.montage.index(ch)
        per_class = {cls: arr[ci] for cls, arr in curves.items()}
        writer.add_file(
            _analysis.export_waveform_svg(
                per_class, dataset.sample_rate, onset, ch, writer.out / f"mrcp_{ch}.svg"
            )
        )
    writer.finish(
        "mrcp",
        seed,
        {"k": k, "c_grid": list(c_grid), "channels": channels, "held_out": test_dir is not None},
    )
    for name in sorted(metrics):
        m = metrics[name]
        line = f"{name} [{m['scenario']}]: cv {m['cv_mean']:.3f} +/- {m['cv_std']:.3f}"
        if "accuracy" in m:
            line += f", held-out {m['accuracy']:.3f} on {m['n']} trials"
        print(line)
    print(f"wrote {len(channels)} waveform panels to {writer.out}")
    return 0


# ---------------------------------------------------------------------------
# analysis wrappers
# ---------------------------------------------------------------------------


def cmd_temporal(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    scenario = str(_get(args, cfg, "scenario", "pen-vs-bottle"))
    if scenario not in _SCENARIO_PAIRS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {_SCENARIO_NAMES}")
    bands = _parse_bands(_get(args, cfg, "bands", None))
    step_s = float(_get(args, cfg, "step", 0.5))
    k = int(_get(args, cfg, "k", DEFAULT_FOLDS))
    c_grid = _parse_c_grid(_get(args, cfg, "c_grid", None))
    a, b = _SCENARIO_PAIRS[scenario]
    dataset = load_dataset(data_dir)
    curve = _analysis.temporal_evolution(
        dataset,
        class_a=a,
        class_b=b,
        bands=bands,
        step_s=step_s,
        k=k,
        seed=derive_seed(seed, "cv", f"temporal_{scenario}"),
        c_grid=c_grid,
    )
    tag = "broadband" if len(bands) > 1 else bands[0]
    writer = RunWriter(out)
    writer.add_file(
        _analysis.export_temporal_csv(curve, writer.out / f"temporal_{scenario}_{tag}.csv")
    )
    onset_s = dataset.trials[0].movement_onset / dataset.sample_rate
    t_stat, p = _analysis.pre_post_ttest(curve, onset_s)
    writer.finish(
        "temporal",
        seed,
        {"scenario": scenario, "bands": list(bands), "step": step_s, "k": k},
    )
    for t, m, s in zip(curve.endpoints_s, curve.mean_accuracies, curve.std_accuracies):
        print(f"t={t:5.2f} s: accuracy {m:.3f} +/- {s:.3f}")
    print(
        f"post-onset vs pre-onset (paired over {curve.k} folds): "
        f"t={t_stat:.3f}, p={p:.4g}"
    )
    return 0


def cmd_importance(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    models_dir = _existing_dir(_get(args, cfg, "models", None), "models")
    phase = str(_get(args, cfg, "phase", "planning"))
    if phase not in _PHASE_NAMES:
        raise ConfigError(f"unknown phase {phase!r}")
    scenario = _get(args, cfg, "scenario", None)
    models = []
    for name, model in sorted(_load_bundles(models_dir).items()):
        if not isinstance(model, FittedClassifier) or model.kind != "fbcsp":
            continue
        if len(model.bands) < 2 or model.phase != phase:
            continue
        if scenario is not None and model.scenario != scenario:
            continue
        models.append(model)
    if not models:
        raise ConfigError(
            f"no broadband models for phase {phase!r} in {models_dir}"
        )
    profile = _analysis.feature_importance(models)
    writer = RunWriter(out)
    writer.add_file(
        _analysis.export_importance_csv(profile, writer.out / f"importance_{phase}.csv")
    )
    writer.finish(
        "importance",
        seed,
        {"phase": phase, "scenario": scenario, "n_models": len(models)},
    )
    for band in profile.bands:
        print(f"{band}: mean |coef| {profile.band_means[band]:.4f}")
    best = max(profile.band_means, key=profile.band_means.get)
    print(f"largest mean coefficient magnitude: {best} band ({len(models)} models)")
    return 0


def cmd_trajectory(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    models_dir = _existing_dir(_get(args, cfg, "models", None), "models")
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    band = str(_get(args, cfg, "band", "theta"))
    if band not in _dsp.BANDS:
        raise ConfigError(f"unknown band {band!r}; expected one of {_dsp.BAND_ORDER}")
    phase = _parse_phases(_get(args, cfg, "phase", "planning"))[0]
    components = _parse_components(_get(args, cfg, "components", None))
    bundle_path = models_dir / f"ovr_{band}_{phase.value}.json"
    if not bundle_path.is_file():
        raise ConfigError(f"no one-vs-rest bundle {bundle_path.name} in {models_dir}")
    try:
        ovr = OvrModel.from_json(json.loads(bundle_path.read_text()))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed bundle {bundle_path.name}: {exc}") from exc
    dataset = load_dataset(data_dir)
    paths = _analysis.csp_trajectory(ovr, dataset, band, phase, components=components)
    writer = RunWriter(out)
    writer.add_file(
        _analysis.export_trajectory(
            paths,
            writer.out / f"trajectory_{band}_{phase.value}.svg",
            components=components,
            title=f"{band} {phase.value} trajectories",
        )
    )
    writer.finish(
        "trajectory",
        seed,
        {"band": band, "phase": phase.value, "components": list(components)},
    )
    for cls in sorted(paths):
        arr = paths[cls]
        print(
            f"{CLASS_NAMES.get(cls, cls)}: {arr.shape[1]} samples, "
            f"peak norm {np.max(np.linalg.norm(arr, axis=0)):.3f}"
        )
    print(f"wrote trajectory figure to {writer.out}")
    return 0


def cmd_topomap(args: argparse.Namespace, cfg: dict) -> int:
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    models_dir = _existing_dir(_get(args, cfg, "models", None), "models")
    data_dir = _existing_dir(_get(args, cfg, "dataset", None), "dataset")
    scenario = str(_get(args, cfg, "scenario", "pen-vs-bottle"))
    if scenario not in _SCENARIO_PAIRS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {_SCENARIO_NAMES}")
    band = str(_get(args, cfg, "band", "theta"))
    if band not in _dsp.BANDS:
        raise ConfigError(f"unknown band {band!r}; expected one of {_dsp.BAND_ORDER}")
    phase = _parse_phases(_get(args, cfg, "phase", "planning"))[0]
    component = int(_get(args, cfg, "component", 1))
    bundle_path = models_dir / f"fbcsp_{scenario}_{band}_{phase.value}.json"
    if not bundle_path.is_file():
        raise ConfigError(f"no bundle {bundle_path.name} in {models_dir}")
    try:
        model = FittedClassifier.from_json(json.loads(bundle_path.read_text()))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed bundle {bundle_path.name}: {exc}") from exc
    dataset = load_dataset(data_dir)
    _check_montage(model.montage_hash, dataset, bundle_path.name)
    csp = model.csp_models.get(band)
    if csp is None:
        raise ConfigError(f"bundle has no spatial filters for band {band!r}")
    n_ch = dataset.montage.n_channels
    if not (1 <= component <= n_ch):
        raise ConfigError(f"component {component} out of range 1..{n_ch}")
    pattern = csp_patterns(csp)[:, component - 1]
    writer = RunWriter(out)
    svg_path, csv_path = _analysis.export_topomap(
        pattern,
        dataset.montage,
        writer.out / f"topomap_{scenario}_{band}_{phase.value}_c{component}.svg",
        title=f"{scenario} {band} {phase.value} component {component}",
    )
    writer.add_file(svg_path)
    writer.add_file(csv_path)
    writer.finish(
        "topomap",
        seed,
        {
            "scenario": scenario,
            "band": band,
            "phase": phase.value,
            "component": component,
        },
    )
    print(f"wrote topography for {scenario} {band} {phase.value} component {component}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspdec",
        description="Offline EEG grasp decoding: band-power spatial-pattern "
        "features with a linear SVM, plus a slow-potential baseline.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
    common.add_argument("--out", help="output directory (default ./out)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--trials-per-class", type=int, dest="trials_per_class")
    p.add_argument("--noise-rms", type=float, dest="noise_rms")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="stratified train/test split")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--test-per-class", type=int, dest="test_per_class")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train model bundles")
    p.add_argument("--dataset", help="training dataset directory")
    p.add_argument("--bands", help="comma list or 'all'")
    p.add_argument("--scenarios", help="comma list of class pairs, 'multiclass', or 'all'")
    p.add_argument("--phases", help="comma list: planning,movement")
    p.add_argument("--k", type=int, help="cross-validation folds (default 10)")
    p.add_argument("--c-grid", dest="c_grid", help="comma list of SVM penalties")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate bundles on held-out data")
    p.add_argument("--models", help="directory of trained bundles")
    p.add_argument("--dataset", help="held-out dataset directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mrcp", parents=[common], help="slow-potential baseline")
    p.add_argument("--dataset", help="training dataset directory")
    p.add_argument("--test", help="held-out dataset directory (optional)")
    p.add_argument("--k", type=int)
    p.add_argument("--c-grid", dest="c_grid")
    p.add_argument("--channels", help="waveform channels (default C3,Cz,C4)")
    p.set_defaults(func=cmd_mrcp)

    p = sub.add_parser("temporal", parents=[common], help="expanding-window curve")
    p.add_argument("--dataset")
    p.add_argument("--scenario")
    p.add_argument("--bands")
    p.add_argument("--step", type=float, help="window increment in seconds")
    p.add_argument("--k", type=int)
    p.add_argument("--c-grid", dest="c_grid")
    p.set_defaults(func=cmd_temporal)

    p = sub.add_parser("importance", parents=[common], help="coefficient importance")
    p.add_argument("--models")
    p.add_argument("--phase", choices=_PHASE_NAMES)
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("trajectory", parents=[common], help="component-space paths")
    p.add_argument("--models")
    p.add_argument("--dataset")
    p.add_argument("--band")
    p.add_argument("--phase", choices=_PHASE_NAMES)
    p.add_argument("--components", help="comma list of 1-based components")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("topomap", parents=[common], help="spatial-pattern topography")
    p.add_argument("--models")
    p.add_argument("--dataset")
    p.add_argument("--scenario")
    p.add_argument("--band")
    p.add_argument("--phase", choices=_PHASE_NAMES)
    p.add_argument("--component", type=int)
    p.set_defaults(func=cmd_topomap)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        _err(str(exc))
        return 2
    except DataError as exc:
        _err(str(exc))
        return 3
    except NumericalError as exc:
        _err(str(exc))
        return 4
    except GraspdecError as exc:  # future subtypes: treat as config-level
        _err(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
