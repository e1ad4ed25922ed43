import json

import numpy as np
import pytest

from semwm.checkpoint import load_checkpoint_with_extra, save_checkpoint
from semwm.cli import EXIT_EMPTY_CATEGORY, EXIT_USAGE, build_parser, main, resolve_params
from semwm.config import train_preset
from semwm.dataset import read_jsonl
from semwm.env import step_batch
from semwm.models import build_model
from semwm.scene import EnvConfig

SMALL_TRAIN = "total_gradient_steps: 30\neval_every: 15\neval_scenes: 100\nvalidation_size: 10\n" \
              "transition_hidden: [16, 16]\nrelation_hidden: [8, 8]\n"


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, (out[-1] if out else None)


def _params(argv):
    return resolve_params(build_parser().parse_args(argv))


def test_presets_minimal_parallel():
    p = _params(["train", "--scenario", "minimal", "--variant", "parallel"])["train_config"]
    assert p["env"]["k"] == 5 and len(p["env"]["shape_set"]) == 3
    assert p["semantic_width"] == 1 and p["batch_size"] == 10 and p["trajectory_length"] == 10
    assert p["total_gradient_steps"] == 200_000


def test_presets_multi_sequential():
    p = _params(["train", "--scenario", "multi", "--variant", "sequential"])["train_config"]
    assert p["env"]["k"] == 7 and len(p["env"]["shape_set"]) == 5
    assert p["semantic_width"] == 16 and p["env"]["click_enabled"]


def test_invalid_variant_exits_without_files(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["train", "--scenario", "minimal", "--variant", "bogus", "--out-root", str(tmp_path / "runs")])
    assert exc.value.code != 0
    assert list(tmp_path.iterdir()) == []


def test_contradictory_width_rejected_before_execution(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("semantic_width: 4\n")
    code = main(["train", "--scenario", "minimal", "--variant", "parallel", "--config", str(cfg),
                 "--out-root", str(tmp_path / "runs")])
    assert code == EXIT_USAGE
    assert not (tmp_path / "runs").exists()
    assert "contradicts" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("k: 5\nnot_a_field: 1\n")
    assert main(["gen", "--config", str(cfg), "--out-root", str(tmp_path / "runs")]) == EXIT_USAGE
    assert not (tmp_path / "runs").exists()


def test_seed_and_out_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SEMWM_SEED", "17")
    monkeypatch.setenv("SEMWM_OUT", str(tmp_path / "envruns"))
    code, run_dir = _run(["gen", "--scenario", "minimal", "--trajectories", "2", "--length", "3"], capsys)
    assert code == 0
    assert run_dir.startswith(str(tmp_path / "envruns")) and run_dir.endswith("_gen_seed17")
    manifest = json.loads((tmp_path / run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 17 and manifest["status"] == "done"
    assert _params(["gen", "--scenario", "minimal", "--seed", "3"])["seed"] == 3


def test_gen_writes_valid_transitions(tmp_path, capsys):
    cfg = tmp_path / "env.yaml"
    cfg.write_text("k: 6\nregular_count_range: [1, 4]\nclick_enabled: true\n")
    code, run_dir = _run(["gen", "--config", str(cfg), "--trajectories", "5", "--length", "4",
                          "--out-root", str(tmp_path)], capsys)
    assert code == 0
    z, a, z1 = read_jsonl(f"{run_dir}/transitions.jsonl")
    assert z.shape == (20, 6, 8)
    env = EnvConfig.from_dict(json.loads(open(f"{run_dir}/manifest.json").read())["params"]["env"])
    assert np.array_equal(step_batch(z, a, env), z1)


def _train(tmp_path, capsys, variant="parallel", scenario="minimal", seed="1"):
    cfg = tmp_path / "train.yaml"
    cfg.write_text(SMALL_TRAIN)
    code, run_dir = _run(["train", "--scenario", scenario, "--variant", variant, "--config", str(cfg),
                          "--seed", seed, "--out-root", str(tmp_path / "runs")], capsys)
    assert code == 0
    return run_dir


def test_train_eval_generalize_probe_stats_and_replay(tmp_path, capsys):
    run_dir = _train(tmp_path, capsys)
    files = {p.split("/")[-1] for p in map(str, __import__("pathlib").Path(run_dir).iterdir())}
    assert {"manifest.json", "log.csv", "log.jsonl", "timing.csv", "checkpoint.bin"} <= files
    model, extra = load_checkpoint_with_extra(f"{run_dir}/checkpoint.bin")
    assert model.kind == "parallel" and extra["step"] == 30
    ckpt = f"{run_dir}/checkpoint.bin"

    runs = {}
    for argv in (["eval", "--checkpoint", ckpt, "--batches", "2", "--scenes", "100"],
                 ["generalize", "--checkpoint", ckpt, "--batches", "2", "--scenes", "100"],
                 ["probe", "--checkpoint", ckpt, "--records", "300"],
                 ["stats", "--scenario", "minimal", "--scenes", "2000"]):
        code, out = _run(argv + ["--seed", "5", "--out-root", str(tmp_path / "runs")], capsys)
        assert code == 0, argv
        runs[argv[0]] = out

    metrics = json.loads(open(f"{runs['eval']}/metrics.json").read())
    assert "pc_locked_no_move" in metrics
    gen = json.loads(open(f"{runs['generalize']}/generalization.json").read())
    assert "pc_unblocked_correct_shape" not in gen
    probe = json.loads(open(f"{runs['probe']}/probe.json").read())
    assert 0 <= probe["accuracy"] <= 1 and probe["records"] > 250
    stats = json.loads(open(f"{runs['stats']}/stats.json").read())
    assert "selected_locked" in stats["reference_comparison"]

    # every run replays byte-identically from its manifest
    outputs = {"train": ["log.csv", "log.jsonl", "checkpoint.bin"], "eval": ["metrics.json"],
               "generalize": ["generalization.json"], "probe": ["embeddings.csv", "probe.json"],
               "stats": ["stats.json"]}
    runs["train"] = run_dir
    for cmd, src in runs.items():
        code, again = _run(["replay", f"{src}/manifest.json", "--out-root", str(tmp_path / "replays")], capsys)
        assert code == 0
        for name in outputs[cmd]:
            assert open(f"{src}/{name}", "rb").read() == open(f"{again}/{name}", "rb").read(), (cmd, name)
        replayed = json.loads(open(f"{again}/manifest.json").read())
        assert replayed["replay_of"].endswith("manifest.json")


def test_eval_exit_code_for_empty_required_category(tmp_path, capsys):
    model = build_model("parallel", 5, "minimal", np.random.default_rng(0), transition_hidden=(8,))
    cfg = train_preset("minimal", "parallel")
    ckpt = save_checkpoint(model, tmp_path / "m.bin", extra={"train_config": cfg.to_dict()})
    base = ["eval", "--checkpoint", str(ckpt), "--batches", "1", "--scenes", "50", "--out-root", str(tmp_path)]
    code, _ = _run(base + ["--require", "pc_unblocked_any_change"], capsys)
    assert code == EXIT_EMPTY_CATEGORY
    code, _ = _run(base + ["--require", "pc_locked_no_move"], capsys)
    assert code == 0


def test_replay_refuses_modified_checkpoint(tmp_path, capsys):
    model = build_model("sequential", 5, "minimal", np.random.default_rng(0), transition_hidden=(8,))
    ckpt = save_checkpoint(model, tmp_path / "m.bin", extra={"train_config": train_preset("minimal", "sequential").to_dict()})
    code, run_dir = _run(["eval", "--checkpoint", str(ckpt), "--batches", "1", "--scenes", "20",
                          "--out-root", str(tmp_path)], capsys)
    assert code == 0
    save_checkpoint(build_model("sequential", 5, "minimal", np.random.default_rng(1), transition_hidden=(8,)), ckpt,
                    extra={"train_config": train_preset("minimal", "sequential").to_dict()})
    assert main(["replay", f"{run_dir}/manifest.json", "--out-root", str(tmp_path)]) == EXIT_USAGE


def test_missing_checkpoint_is_a_usage_error(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.bin"), "--out-root", str(tmp_path / "r")]) == EXIT_USAGE
    assert not (tmp_path / "r").exists()
