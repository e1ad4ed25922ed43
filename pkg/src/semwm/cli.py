"""Command-line entry point: ``semwm {gen,train,eval,generalize,stats,probe,replay}``.

Every command resolves its arguments into a JSON-serializable parameter set,
creates a run directory (``<root>/<timestamp>_<command>_seed<seed>``), writes
``manifest.json`` and only then starts computing. ``semwm replay
<manifest.json>`` re-runs a command from its manifest alone; logs, checkpoints
and exports come out byte-identical.

Environment variables: ``SEMWM_SEED`` supplies the seed when ``--seed`` is not
given and ``SEMWM_OUT`` the run root when ``--out-root`` is not given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint_with_extra
from .config import SCENARIOS, env_preset, load_config_file, resolve_train_config
from .dataset import generate, write_jsonl
from .embed import collect_embeddings, linear_probe, scenes_for_records, write_csv
from .evaluation import CATEGORIES, evaluate, generalization_eval, state_probabilities
from .models import VARIANTS
from .scene import EnvConfig
from .training import (
    STREAM_DATA,
    STREAM_EVAL,
    STREAM_EXPORT,
    STREAM_GENERALIZE,
    STREAM_PROBE,
    STREAM_STATS,
    TrainConfig,
    stream,
    train,
)

log = logging.getLogger("semwm")

# target rates the default samplers are expected to reproduce (stats command)
REFERENCE_RATES = {
    "minimal": {"selected_locked": 0.42},
    "multi": {"selected_locked": 0.38, "selected_blocked": 0.22},
}
REFERENCE_TOLERANCE = 0.05

EXIT_USAGE = 2
EXIT_EMPTY_CATEGORY = 3


class UsageError(ValueError):
    pass


# -- argument resolution -------------------------------------------------------

def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SEMWM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SEMWM_SEED must be an integer, got {env!r}") from None


def _env_from_file(values: dict, scenario: Optional[str], seed: int) -> EnvConfig:
    values = dict(values)
    scenario = scenario or values.pop("scenario", None)
    values.pop("scenario", None)
    values.pop("seed", None)
    section = values.pop("env", None)
    if section is not None and values:
        raise UsageError(f"unexpected top-level keys next to 'env': {sorted(values)}")
    fields = section if section is not None else values
    base = env_preset(scenario, seed).to_dict() if scenario else EnvConfig(seed=seed).to_dict()
    base.update(fields or {})
    base["seed"] = seed
    return EnvConfig.from_dict(base)


def _resolve_env(args, seed: int) -> EnvConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    if not args.scenario and not file_values:
        raise UsageError("give --scenario or --config")
    return _env_from_file(file_values, args.scenario, seed)


def _checkpoint_input(path) -> tuple[dict, dict]:
    """(input record with hash, checkpoint extra) for a checkpoint path."""
    path = Path(path).resolve()
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    try:
        _, extra = load_checkpoint_with_extra(path)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    return {"path": str(path), "sha256": hashlib.sha256(data).hexdigest()}, extra


def _env_for_checkpoint(args, extra: dict, seed: int) -> EnvConfig:
    if args.scenario or getattr(args, "config", None):
        return _resolve_env(args, seed)
    train_cfg = extra.get("train_config")
    if not train_cfg:
        raise UsageError("checkpoint carries no training config; give --scenario or --config")
    return replace(EnvConfig.from_dict(train_cfg["env"]), seed=seed)


def resolve_params(args) -> dict:
    """Turn parsed arguments into the parameter set stored in the manifest."""
    seed = _resolve_seed(args)
    p: dict = {"command": args.command, "seed": seed}
    if args.command == "gen":
        p["env"] = _resolve_env(args, seed).to_dict()
        p["trajectories"] = args.trajectories
        p["length"] = args.length
    elif args.command == "train":
        values = load_config_file(args.config) if args.config else {}
        if not args.scenario and not values:
            raise UsageError("give --scenario or --config")
        overrides = {"total_gradient_steps": args.steps, "eval_every": args.eval_every,
                     "checkpoint_each_eval": args.checkpoint_each_eval or None}
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = resolve_train_config(args.scenario, args.variant, values, seed)
        p["train_config"] = cfg.to_dict()
    elif args.command in ("eval", "generalize", "probe"):
        ckpt, extra = _checkpoint_input(args.checkpoint)
        p["checkpoint"] = ckpt
        p["env"] = _env_for_checkpoint(args, extra, seed).to_dict()
        if args.command == "eval":
            p["batches"], p["scenes"] = args.batches, args.scenes
            p["require"] = list(args.require or [])
        elif args.command == "generalize":
            p["batches"], p["scenes"] = args.batches, args.scenes
        else:
            p["records"], p["train_fraction"] = args.records, args.train_fraction
    elif args.command == "stats":
        env = _resolve_env(args, seed)
        p["env"] = env.to_dict()
        p["scenario"] = args.scenario
        p["scenes"] = args.scenes
    else:
        raise UsageError(f"unknown command {args.command!r}")
    return p


# -- run directories and manifests -----------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_run_dir(root, command: str, seed: int) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(root) / f"{stamp}_{command}_seed{seed}"
    path, n = base, 1
    while path.exists():
        n += 1
        path = base.with_name(f"{base.name}_{n}")
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, manifest: dict) -> None:
    tmp = run_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(run_dir / "manifest.json")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands --------------------------------------------------------------------

def run_gen(p: dict, run_dir: Path) -> dict:
    cfg = EnvConfig.from_dict(p["env"])
    scenes, actions = generate(cfg, stream(p["seed"], STREAM_DATA), p["trajectories"], p["length"])
    n = write_jsonl(run_dir / "transitions.jsonl", scenes, actions)
    return {"outputs": {"dataset": "transitions.jsonl"}, "results": {"transitions": n}}


def run_train(p: dict, run_dir: Path) -> dict:
    cfg = TrainConfig.from_dict(p["train_config"])
    cfg = replace(cfg, checkpoint_path=str(run_dir / "checkpoint.bin"))
    _, tlog = train(cfg, run_dir)
    last = tlog.records[-1] if tlog.records else {}
    outputs = {"log_csv": "log.csv", "log_jsonl": "log.jsonl", "timing": "timing.csv", "checkpoint": "checkpoint.bin"}
    return {"outputs": outputs, "results": {"final": last}}


def _load_model(p: dict):
    model, _ = load_checkpoint_with_extra(p["checkpoint"]["path"])
    return model


def _verify_checkpoint(p: dict) -> None:
    data = Path(p["checkpoint"]["path"]).read_bytes()
    if hashlib.sha256(data).hexdigest() != p["checkpoint"]["sha256"]:
        raise UsageError(f"checkpoint {p['checkpoint']['path']} changed since the manifest was written")


def run_eval(p: dict, run_dir: Path) -> dict:
    cfg = EnvConfig.from_dict(p["env"])
    report = evaluate(_load_model(p), cfg, p["batches"], p["scenes"], stream(p["seed"], STREAM_EVAL))
    metrics = report.to_dict()
    _write_json(run_dir / "metrics.json", metrics)
    (run_dir / "metrics.csv").write_text(report.to_csv())
    empty = [c for c in p.get("require", []) if report.count[c] == 0]
    return {"outputs": {"metrics": "metrics.json", "metrics_csv": "metrics.csv"}, "results": metrics,
            "empty_required": empty}


def run_generalize(p: dict, run_dir: Path) -> dict:
    cfg = EnvConfig.from_dict(p["env"])
    report = generalization_eval(_load_model(p), cfg, stream(p["seed"], STREAM_GENERALIZE), p["batches"], p["scenes"])
    metrics = report.to_dict()
    _write_json(run_dir / "generalization.json", metrics)
    (run_dir / "generalization.csv").write_text(report.to_csv())
    return {"outputs": {"metrics": "generalization.json", "metrics_csv": "generalization.csv"}, "results": metrics}


def run_stats(p: dict, run_dir: Path) -> dict:
    cfg = EnvConfig.from_dict(p["env"])
    rep = state_probabilities(cfg, p["scenes"], stream(p["seed"], STREAM_STATS))
    stats = rep.to_dict()
    comparison = {}
    for key, target in REFERENCE_RATES.get(p.get("scenario") or "", {}).items():
        measured = stats[key]
        comparison[key] = {"reference": target, "measured": measured, "deviation": measured - target,
                           "within_tolerance": abs(measured - target) <= REFERENCE_TOLERANCE}
    stats["reference_comparison"] = comparison
    _write_json(run_dir / "stats.json", stats)
    return {"outputs": {"stats": "stats.json"}, "results": stats}


def run_probe(p: dict, run_dir: Path) -> dict:
    cfg = EnvConfig.from_dict(p["env"])
    model = _load_model(p)
    records = collect_embeddings(model, cfg, scenes_for_records(cfg, p["records"]), stream(p["seed"], STREAM_EXPORT))
    n = write_csv(records, run_dir / "embeddings.csv")
    report = linear_probe(records, p["train_fraction"], stream(p["seed"], STREAM_PROBE))
    result = report.to_dict()
    result["records"] = n
    result["label_counts"] = records.label_counts()
    _write_json(run_dir / "probe.json", result)
    return {"outputs": {"embeddings": "embeddings.csv", "probe": "probe.json"}, "results": result}


RUNNERS = {
    "gen": run_gen,
    "train": run_train,
    "eval": run_eval,
    "generalize": run_generalize,
    "stats": run_stats,
    "probe": run_probe,
}


def execute(p: dict, run_dir: Path, replay_of: Optional[str] = None) -> int:
    if "checkpoint" in p:
        _verify_checkpoint(p)
    manifest = {
        "tool": "semwm",
        "version": __version__,
        "command": p["command"],
        "seed": p["seed"],
        "params": p,
        "run_dir": str(run_dir.resolve()),
        "started": _now(),
        "status": "running",
    }
    if replay_of:
        manifest["replay_of"] = replay_of
    write_manifest(run_dir, manifest)
    try:
        out = RUNNERS[p["command"]](p, run_dir)
    except Exception as exc:
        manifest.update(status="failed", finished=_now(), error=f"{type(exc).__name__}: {exc}")
        write_manifest(run_dir, manifest)
        raise
    manifest.update(status="done", finished=_now(), outputs=out["outputs"], results=out["results"])
    write_manifest(run_dir, manifest)
    print(run_dir)
    empty = out.get("empty_required")
    if empty:
        log.error("requested categories had no samples: %s", ", ".join(empty))
        return EXIT_EMPTY_CATEGORY
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semwm", description="Object-centric world models with a semantic module.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        sp.add_argument("--seed", type=int, default=None, help="master seed (default: $SEMWM_SEED or 0)")
        sp.add_argument("--out-root", default=None, help="directory holding run directories (default: $SEMWM_OUT or runs)")
        sp.add_argument("--run-dir", default=None, help="exact run directory to use instead of a timestamped one")
        if scenario:
            sp.add_argument("--scenario", choices=SCENARIOS, default=None)
            sp.add_argument("--config", type=Path, default=None, help="YAML/JSON file mirroring EnvConfig/TrainConfig")

    sp = sub.add_parser("gen", help="write a transition dataset")
    common(sp)
    sp.add_argument("--trajectories", type=int, default=1000)
    sp.add_argument("--length", type=int, default=10)

    sp = sub.add_parser("train", help="train a world model")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS, default=None)
    sp.add_argument("--steps", type=int, default=None, help="override the preset gradient-step budget")
    sp.add_argument("--eval-every", type=int, default=None)
    sp.add_argument("--checkpoint-each-eval", action="store_true")

    sp = sub.add_parser("eval", help="percent-correct metrics of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--batches", type=int, default=10)
    sp.add_argument("--scenes", type=int, default=1000)
    sp.add_argument("--require", nargs="*", choices=CATEGORIES, default=None,
                    help="exit with status 3 if any of these categories has no samples")

    sp = sub.add_parser("generalize", help="metrics on objects with unseen shapes")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--batches", type=int, default=1000)
    sp.add_argument("--scenes", type=int, default=1000)

    sp = sub.add_parser("stats", help="semantic state probabilities of the sampler")
    common(sp)
    sp.add_argument("--scenes", type=int, default=1_000_000)

    sp = sub.add_parser("probe", help="export embeddings and fit a linear probe")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--records", type=int, default=10_000)
    sp.add_argument("--train-fraction", type=float, default=0.8)

    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest", type=Path)
    sp.add_argument("--out-root", default=None)
    sp.add_argument("--run-dir", default=None)
    return parser


def _run_dir(args, command: str, seed: int) -> Path:
    if args.run_dir:
        path = Path(args.run_dir)
        if path.exists() and any(path.iterdir()):
            raise UsageError(f"run directory {path} is not empty")
        path.mkdir(parents=True, exist_ok=True)
        return path
    root = args.out_root or os.environ.get("SEMWM_OUT") or "runs"
    return make_run_dir(root, command, seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        replay_of = None
        if args.command == "replay":
            source = json.loads(args.manifest.read_text())
            params = source["params"]
            replay_of = str(args.manifest.resolve())
        else:
            params = resolve_params(args)
        if "checkpoint" in params:
            _verify_checkpoint(params)
        run_dir = _run_dir(args, params["command"], params["seed"])
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"semwm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return execute(params, run_dir, replay_of)


if __name__ == "__main__":
    sys.exit(main())
