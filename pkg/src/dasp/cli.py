"""Command-line entry point: ``dasp <command> [--config run.yaml] [--seed n] [--out dir]``.

Exit codes: 0 success, 1 config schema violation, 2 unreadable or malformed
WAV/CSV/YAML input, 3 a runtime invariant failed (training diverged, a
gradient check failed, non-finite values).

Every command derives its randomness from the root seed: synthetic data uses
``default_rng([seed, stream, clip])`` through :class:`SynthSpec`, and models
are initialised and shuffled from ``seed`` itself.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

COMMANDS = ("denoise", "separate", "doa", "sed", "speaker", "visualize", "ot", "diffuse", "gradcheck")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


class InputError(ValueError):
    """Unreadable or malformed input file; the message names the file and location."""


# schema ----------------------------------------------------------------------


# dataset fields each generator reads, besides rate, duration and n_clips
TASK_FIELDS = {
    "denoise": ("snr_db", "tone_hz"),
    "separate": ("n_sources",),
    "sed": ("density", "n_classes"),
    "speaker": ("snr_db", "n_speakers"),
    "doa": ("snr_db", "n_sources", "n_mics"),
}


def _data_defaults(task: str, **overrides) -> dict:
    from .pipelines import SynthSpec

    base = SynthSpec(task, **overrides)
    return {name: getattr(base, name) for name in ("n_clips", "rate", "duration", *TASK_FIELDS[task])}


def _model_defaults(estimator) -> dict:
    params = estimator().get_params()
    params.pop("seed", None)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def schema(command: str) -> dict:
    """Default config for ``command``; every accepted key appears here."""
    from .pipelines import Denoiser, EventDetector, Separator, SpeakerEmbedder

    common = {"seed": 0, "verbosity": 1}
    if command == "denoise":
        return common | {"input": None, "data": _data_defaults("denoise", n_clips=100), "model": _model_defaults(Denoiser)}
    if command == "separate":
        return common | {"input": None, "data": _data_defaults("separate", n_clips=100), "model": _model_defaults(Separator)}
    if command == "sed":
        return common | {
            "input": None,
            "data": _data_defaults("sed", n_clips=200),
            "model": _model_defaults(EventDetector),
            "thresholds": {"global": 0.5, "low": 0.2, "high": 0.75, "min_duration": 5},
        }
    if command == "speaker":
        return common | {
            "inputs": [],
            "threshold": 0.5,
            "enroll_clips": 2,
            "data": _data_defaults("speaker", n_clips=100, snr_db=20.0),
            "model": _model_defaults(SpeakerEmbedder),
        }
    if command == "doa":
        return common | {
            "scene": None,
            "method": "spatial_spectrum",
            "win_length": 256,
            "hop": 128,
            "data": _data_defaults("doa", n_clips=100, n_sources=1, snr_db=20.0, duration=0.5),
        }
    if command == "visualize":
        return common | {
            "input": None,
            "method": "tsne",
            "n_components": 2,
            "n_neighbors": 10,
            "perplexity": 10.0,
            "n_iter": 500,
        }
    if command == "ot":
        return common | {"source": None, "target": None}
    if command == "diffuse":
        return common | {
            "steps_T": 50,
            "start": 0.99,
            "final_alpha_bar": 1e-4,
            "n_train": 4000,
            "cluster_std": 0.1,
            "hidden": [64, 64],
            "train_steps": 2000,
            "batch": 128,
            "lr": 1e-3,
            "n_samples": 1000,
            "keep": [50, 25, 10, 0],
        }
    if command == "gradcheck":
        return common | {"seeds": [0, 1, 2], "tol": 1e-5}
    raise ConfigError(f"command: unknown command {command!r}")


def _check_type(path: str, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def validate_config(command: str, doc) -> dict:
    """Merge ``doc`` over the defaults; unknown keys and wrong types raise :class:`ConfigError`."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>: config must be a mapping")
    doc = dict(doc)
    if "command" in doc:
        if doc.pop("command") != command:
            raise ConfigError(f"command: config is for a different command than {command!r}")

    def merge(defaults: dict, given: dict, prefix: str) -> dict:
        out = dict(defaults)
        for key, value in given.items():
            path = f"{prefix}{key}"
            if key not in defaults:
                raise ConfigError(f"{path}: unknown key")
            if isinstance(defaults[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"{path}: expected a mapping")
                out[key] = merge(defaults[key], value, path + ".")
            else:
                out[key] = _check_type(path, defaults[key], value)
        return out

    return merge(schema(command), doc, "")


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1} column {mark.column + 1}" if mark else ""
        raise InputError(f"{path}:{where} malformed YAML") from exc


# input readers -----------------------------------------------------------------


def _read_wav(path):
    from .dsp import read_wav

    try:
        return read_wav(path)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: no such file") from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _read_csv(path) -> np.ndarray:
    """Numeric CSV, one sample per row; an optional non-numeric header line is skipped."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    rows, width = [], None
    for lineno, line in enumerate(csv.reader(lines), start=1):
        if not line or all(not c.strip() for c in line):
            continue
        try:
            vals = [float(c) for c in line]
        except ValueError:
            if lineno == 1 and not rows:
                continue
            raise InputError(f"{path}: line {lineno}: non-numeric field") from None
        if width is not None and len(vals) != width:
            raise InputError(f"{path}: line {lineno}: expected {width} fields, got {len(vals)}")
        if not np.all(np.isfinite(vals)):
            raise InputError(f"{path}: line {lineno}: non-finite value")
        width = len(vals)
        rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.array(rows)


def _mono(samples: np.ndarray) -> np.ndarray:
    return samples if samples.ndim == 1 else samples[:, 0]


def _check_rate(path, rate, expected):
    if rate != expected:
        raise InputError(f"{path}: sample rate {rate} Hz, the model expects {expected} Hz")


# artifact helpers ----------------------------------------------------------------


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in r])


def _checkpoint(estimator, path) -> None:
    """Every fitted network and standardizer of ``estimator`` in one tensor container."""
    from .autodiff import save_tensors
    from .layers import Module

    out = {}
    for name, value in sorted(vars(estimator).items()):
        if isinstance(value, Module):
            out.update({f"{name}.{k}": v for k, v in value.state_dict().items()})
        elif hasattr(value, "mean") and hasattr(value, "scale"):
            out[f"{name}.mean"], out[f"{name}.scale"] = value.mean, value.scale
    save_tensors(path, out)


def _spec(task: str, cfg: dict):
    from .pipelines import SynthSpec

    return SynthSpec(task, seed=cfg["seed"], **cfg["data"])


def _estimator(cls, params: dict, seed: int):
    return cls(**{k: tuple(v) if k == "hidden" else v for k, v in params.items()}, seed=seed)


def _say(cfg, *msg):
    if cfg["verbosity"] > 0:
        print(*msg)


# commands ------------------------------------------------------------------------
# Each command has a ``plan`` (artifact list, inputs checked, nothing written)
# and a ``run``.


def _input_plan(cfg, key, reader):
    if cfg.get(key):
        reader(cfg[key])
        return [f"read {cfg[key]}"]
    return []


def plan_denoise(cfg):
    steps = _input_plan(cfg, "input", _read_wav)
    return steps + ["enhanced.wav", "noisy.wav" if not cfg["input"] else None, "metrics.csv", "training.csv", "model.dten"]


def run_denoise(cfg, out: Path):
    from .dsp import write_wav
    from .pipelines import Denoiser, synth_generate

    ds = synth_generate(_spec("denoise", cfg))
    train_idx, test_idx = ds.split()
    model = _estimator(Denoiser, cfg["model"], cfg["seed"])
    model.fit(ds, train_idx, test_idx, dump_path=out / "diverged.dten")
    m = model.evaluate(ds, test_idx)
    _write_rows(
        out / "metrics.csv",
        ["clip", "si_sdr_noisy", "si_sdr_enhanced", "si_sdr_oracle"],
        zip(test_idx.tolist(), m["noisy"], m["enhanced"], m["oracle"]),
    )
    model.log_.to_csv(out / "training.csv")
    _checkpoint(model, out / "model.dten")
    if cfg["input"]:
        rate, x = _read_wav(cfg["input"])
        _check_rate(cfg["input"], rate, ds.spec.rate)
        x = _mono(x)
    else:
        rate, x = ds.spec.rate, ds.inputs[test_idx[0]]
        write_wav(out / "noisy.wav", rate, x)
    write_wav(out / "enhanced.wav", rate, model.enhance(x))
    _say(cfg, f"mean SI-SDR noisy {np.mean(m['noisy']):.2f} dB, enhanced {np.mean(m['enhanced']):.2f} dB, oracle {np.mean(m['oracle']):.2f} dB")


def plan_separate(cfg):
    steps = _input_plan(cfg, "input", _read_wav)
    J = cfg["data"]["n_sources"]
    return steps + [f"source_{j + 1}.wav" for j in range(J)] + ["metrics.csv", "training.csv", "model.dten"]


def run_separate(cfg, out: Path):
    from .dsp import write_wav
    from .pipelines import Separator, synth_generate

    ds = synth_generate(_spec("separate", cfg))
    train_idx, test_idx = ds.split()
    model = _estimator(Separator, cfg["model"] | {"n_sources": ds.spec.n_sources}, cfg["seed"])
    model.fit(ds, train_idx, test_idx, dump_path=out / "diverged.dten")
    m = model.evaluate(ds, test_idx)
    rows = [(int(n), j + 1, s) for n, per in zip(test_idx, m["si_sdr"]) for j, s in enumerate(per)]
    _write_rows(out / "metrics.csv", ["clip", "source", "si_sdr"], rows)
    model.log_.to_csv(out / "training.csv")
    _checkpoint(model, out / "model.dten")
    if cfg["input"]:
        rate, x = _read_wav(cfg["input"])
        _check_rate(cfg["input"], rate, ds.spec.rate)
        x = _mono(x)
    else:
        rate, x = ds.spec.rate, ds.inputs[test_idx[0]]
    for j, est in enumerate(model.separate(x)):
        write_wav(out / f"source_{j + 1}.wav", rate, est)
    _say(cfg, f"minimum per-source SI-SDR {np.min(m['si_sdr']):.2f} dB over {len(test_idx)} held-out clips")


def plan_sed(cfg):
    return _input_plan(cfg, "input", _read_wav) + ["decisions.csv", "metrics.csv", "training.csv", "model.dten"]


def run_sed(cfg, out: Path):
    from .detection import DecisionThresholds
    from .detection import save_decisions
    from .pipelines import EventDetector, synth_generate

    th = cfg["thresholds"]
    thresholds = DecisionThresholds(th["global"], th["low"], th["high"], th["min_duration"])
    ds = synth_generate(_spec("sed", cfg))
    train_idx, test_idx = ds.split()
    model = _estimator(EventDetector, cfg["model"], cfg["seed"])
    model.fit(ds, train_idx, test_idx, dump_path=out / "diverged.dten")
    m = model.evaluate(ds, test_idx)
    rows = [("frame_auc", "all", m["frame_auc"])] + [("class_auc", c, a) for c, a in enumerate(m["class_auc"])]
    _write_rows(out / "metrics.csv", ["metric", "class", "value"], rows)
    model.log_.to_csv(out / "training.csv")
    _checkpoint(model, out / "model.dten")
    if cfg["input"]:
        rate, x = _read_wav(cfg["input"])
        _check_rate(cfg["input"], rate, ds.spec.rate)
        x = _mono(x)
    else:
        x = ds.inputs[test_idx[0]]
    save_decisions(out / "decisions.csv", model.frame_probabilities(x), model.predict(x, thresholds))
    _say(cfg, f"frame AUC {m['frame_auc']:.4f}")


def plan_speaker(cfg):
    for p in cfg["inputs"]:
        _read_wav(p)
    return [f"read {p}" for p in cfg["inputs"]] + ["identification.csv", "registry.csv", "model.dten"]


def run_speaker(cfg, out: Path):
    from .pipelines import SpeakerEmbedder, identify_embedding, speaker_enroll, synth_generate
    from .pipelines.speaker import SpeakerRegistry

    ds = synth_generate(_spec("speaker", cfg))
    train_idx, test_idx = ds.split()
    model = _estimator(SpeakerEmbedder, cfg["model"], cfg["seed"]).fit(ds, train_idx)
    registry = SpeakerRegistry()
    for s in np.unique(ds.speakers):
        own = train_idx[ds.speakers[train_idx] == s][: cfg["enroll_clips"]]
        registry.add(speaker_enroll(ds.inputs[own], model, f"spk{s}"))
    rows, hits = [], []
    for n in test_idx:
        res = identify_embedding(model.embed(ds.inputs[n]), registry, cfg["threshold"])
        rows.append((f"clip{n}", f"spk{ds.speakers[n]}", res.speaker_id or "", res.score))
        hits.append(res.speaker_id == f"spk{ds.speakers[n]}")
    for p in cfg["inputs"]:
        rate, x = _read_wav(p)
        _check_rate(p, rate, ds.spec.rate)
        res = identify_embedding(model.embed(_mono(x)), registry, cfg["threshold"])
        rows.append((str(p), "", res.speaker_id or "", res.score))
    _write_rows(out / "identification.csv", ["item", "true_speaker", "predicted_speaker", "score"], rows)
    dim = len(next(iter(registry.values())).embedding)
    _write_rows(
        out / "registry.csv",
        ["speaker_id"] + [f"e{i + 1}" for i in range(dim)],
        [[k, *map(float, r.embedding)] for k, r in sorted(registry.items())],
    )
    _checkpoint(model, out / "model.dten")
    _say(cfg, f"top-1 identification {np.mean(hits):.3f} on {len(test_idx)} held-out clips")


def plan_doa(cfg):
    from .pipelines.doa import METHODS

    if cfg["method"] not in METHODS or cfg["method"] == "network":
        raise ConfigError(f"method: expected one of {[m for m in METHODS if m != 'network']}")
    if cfg["scene"]:
        _load_scene(cfg["scene"])
        return [f"read {cfg['scene']}", "heatmap.csv", "doa.csv"]
    return ["doa.csv"]


def _load_scene(path):
    from .spatial import load_scene

    try:
        return load_scene(path)
    except FileNotFoundError as exc:
        raise InputError(f"{exc.filename or path}: no such file") from exc
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: malformed YAML") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def run_doa(cfg, out: Path):
    from .pipelines import estimate_doa, evaluate_doa, synth_generate
    from .pipelines.doa import grid_azimuths
    from .spatial import save_heatmap, simulate_scene

    if cfg["scene"]:
        scene = _load_scene(cfg["scene"])
        obs, _ = simulate_scene(scene, cfg["win_length"], cfg["hop"], seed=cfg["seed"])
        res = estimate_doa(obs, scene.geometry, cfg["method"])
        save_heatmap(out / "heatmap.csv", res.posterior)
        az = grid_azimuths(res.grid)
        _write_rows(out / "doa.csv", ["frame", "azimuth_deg"], [(t, float(az[j])) for t, j in enumerate(res.frame_argmax)])
        _say(cfg, f"summary azimuth {res.azimuth:.1f} deg")
        return
    ds = synth_generate(_spec("doa", cfg))
    m = evaluate_doa(ds, cfg["method"], win_length=cfg["win_length"], hop=cfg["hop"])
    truth = [float(np.atleast_1d(a)[0]) for a in ds.azimuths]
    _write_rows(out / "doa.csv", ["scene", "true_azimuth_deg", "estimated_azimuth_deg", "error_deg"], zip(range(len(ds)), truth, m["estimate"], m["error"]))
    _say(cfg, f"maximum angular error {np.max(m['error']):.2f} deg over {len(ds)} scenes")


def plan_visualize(cfg):
    if cfg["method"] not in ("tsne", "mds", "lle"):
        raise ConfigError("method: expected one of ['tsne', 'mds', 'lle']")
    if not cfg["input"]:
        raise ConfigError("input: a CSV of samples (one per row) is required")
    _read_csv(cfg["input"])
    return [f"read {cfg['input']}", "embedding.csv"]


def run_visualize(cfg, out: Path):
    from .transforms import lle_embed, mds_embed, save_embedding, tsne_embed

    X = _read_csv(cfg["input"])
    L = cfg["n_components"]
    if cfg["method"] == "mds":
        sq = np.sum(X**2, axis=1)
        res = mds_embed(np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0), L)
    elif cfg["method"] == "lle":
        res = lle_embed(X, cfg["n_neighbors"], n_components=L)
    else:
        res = tsne_embed(X, n_components=L, perplexity=cfg["perplexity"], n_iter=cfg["n_iter"], rng=cfg["seed"])
    save_embedding(out / "embedding.csv", res)
    _say(cfg, f"{cfg['method']} embedding of {X.shape[0]} samples into {L} dimensions")


def plan_ot(cfg):
    for key in ("source", "target"):
        if not cfg[key]:
            raise ConfigError(f"{key}: a CSV of samples (one per row) is required")
        _read_csv(cfg[key])
    return [f"read {cfg['source']}", f"read {cfg['target']}", "plan.csv"]


def run_ot(cfg, out: Path):
    from .transforms import ot_solve, squared_euclidean_cost

    X, Y = _read_csv(cfg["source"]), _read_csv(cfg["target"])
    if X.shape[1] != Y.shape[1]:
        raise InputError(f"{cfg['target']}: {Y.shape[1]} columns, source has {X.shape[1]}")
    plan = ot_solve(squared_euclidean_cost(X, Y), np.full(len(X), 1 / len(X)), np.full(len(Y), 1 / len(Y)))
    P = np.asarray(plan.plan, dtype=float)
    rows = [(i, j, float(P[i, j])) for i, j in zip(*np.nonzero(P > 0))]
    _write_rows(out / "plan.csv", ["source", "target", "mass"], rows)
    _say(cfg, f"transport cost {float(plan.cost):.10g}")


def plan_diffuse(cfg):
    if cfg["steps_T"] < 2:
        raise ConfigError("steps_T: need at least 2 diffusion steps")
    return ["samples.csv", "trajectory.csv", "training.csv", "model.dten"]


def run_diffuse(cfg, out: Path):
    from .autodiff import save_tensors
    from .generative import diffusion_schedule, reverse_sample, save_samples, save_trajectory, train_diffusion, two_cluster_data
    from .pipelines import mlp, write_csv

    seed = cfg["seed"]
    s = diffusion_schedule(cfg["steps_T"], start=cfg["start"], final_alpha_bar=cfg["final_alpha_bar"])
    data, _ = two_cluster_data(cfg["n_train"], std=cfg["cluster_std"], rng=[seed, 0])
    net = mlp([3, *cfg["hidden"], 2], [seed, 1], output_activation="identity")
    history = train_diffusion(net, data, s, steps=cfg["train_steps"], batch=cfg["batch"], lr=cfg["lr"], rng=[seed, 2])
    samples, snaps = reverse_sample(net, s, cfg["n_samples"], 2, rng=[seed, 3], keep=cfg["keep"])
    save_samples(out / "samples.csv", samples)
    save_trajectory(out / "trajectory.csv", snaps)
    write_csv(out / "training.csv", [{"step": i, "loss": float(v), "loss_per_sample": float(v) / cfg["batch"]} for i, v in enumerate(history)])
    save_tensors(out / "model.dten", net.state_dict())
    near = np.min(np.abs(np.abs(samples[0])[None, :] - 2.0), axis=0) ** 2 + samples[1] ** 2
    _say(cfg, f"{np.mean(near <= (3 * cfg['cluster_std']) ** 2):.1%} of samples within 3 std of a cluster center")


def plan_gradcheck(cfg):
    return ["pass/fail table on stdout"]


def run_gradcheck(cfg, out: Path | None):
    from .gradsuite import format_table, timed_suite

    results, seconds = timed_suite(seeds=tuple(cfg["seeds"]), tol=cfg["tol"])
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {seconds:.1f} s")
    return 3 if failed else 0


# entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dasp", description="Audio and spatial signal processing recipes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--out", default="dasp-out", help="artifact directory")
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan without writing")
        p.add_argument("--threads", type=int, default=1, help="numeric library threads")
        if name in ("denoise", "separate", "sed", "visualize"):
            p.add_argument("--input", help="input WAV (CSV for visualize)")
        if name in ("visualize", "doa"):
            p.add_argument("--method")
        if name == "doa":
            p.add_argument("--scene", help="scene YAML")
        if name == "speaker":
            p.add_argument("--inputs", nargs="*", help="WAV clips to identify")
        if name == "ot":
            p.add_argument("--source", help="source samples CSV")
            p.add_argument("--target", help="target samples CSV")
    return parser


def _resolve(cfg: dict, base: Path) -> dict:
    for key in ("input", "scene", "source", "target"):
        if cfg.get(key):
            cfg[key] = str(base / cfg[key])
    if "inputs" in cfg:
        cfg["inputs"] = [str(base / p) for p in cfg["inputs"]]
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        doc = {}
        if args.config:
            doc = load_config(args.config)
        cfg = validate_config(cmd, doc)
        if args.config:
            cfg = _resolve(cfg, Path(args.config).resolve().parent)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if cfg["seed"] < 0:
            raise ConfigError("seed: must be non-negative")
        for key in ("input", "method", "scene", "source", "target", "inputs"):
            value = getattr(args, key, None)
            if value is not None:
                cfg[key] = value
        if args.threads < 1:
            raise ConfigError("threads: must be at least 1")
        if "data" in cfg:
            _spec(cmd, cfg)  # SynthSpec rejects out-of-range dataset values
        steps = [s for s in globals()[f"plan_{cmd}"](cfg) if s]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: data: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out)
    if args.dry_run:
        print(f"{cmd} (seed {cfg['seed']}, {args.threads} thread(s))")
        print(yaml.safe_dump(cfg, sort_keys=True).rstrip())
        for s in steps:
            print(f"  {s}" if s.startswith("read ") else f"  write {out / s}" if cmd != "gradcheck" else f"  {s}")
        return 0

    from .autodiff import NonFiniteError
    from .pipelines import TrainingDivergedError

    try:
        with threadpool_limits(args.threads):
            if cmd == "gradcheck":
                return run_gradcheck(cfg, None)
            out.mkdir(parents=True, exist_ok=True)
            globals()[f"run_{cmd}"](cfg, out)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc} (state saved to {exc.dump_path})", file=sys.stderr)
        return 3
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
