"""Tests for the command-line frontend.

Covers config resolution precedence, variant wiring, exit-code mapping, and
one synth -> train -> eval -> inspect -> bench round trip on a small corpus.
"""

import argparse
import copy
import json

import pytest

from tfssd.cli import (
    DEFAULT_CONFIG,
    VARIANTS,
    _apply_set,
    build_model_config,
    build_train_config,
    main,
    resolve_config,
)
from tfssd.errors import ConfigError


def ns(config=None, overrides=None, out=None, seed=None):
    return argparse.Namespace(config=config, set=overrides, out=out, seed=seed)


class TestConfigResolution:
    def test_defaults_returned_as_fresh_copy(self):
        resolved = resolve_config(ns())
        assert resolved == DEFAULT_CONFIG
        resolved["model"]["d_model"] = 999
        assert DEFAULT_CONFIG["model"]["d_model"] == 24

    def test_file_overrides_defaults_but_keeps_siblings(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"variant": "attn", "train": {"lr": 0.001}}))
        resolved = resolve_config(ns(config=str(path)))
        assert resolved["variant"] == "attn"
        assert resolved["train"]["lr"] == 0.001
        assert resolved["train"]["batch"] == DEFAULT_CONFIG["train"]["batch"]

    def test_set_overrides_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"lr": 0.001}}))
        resolved = resolve_config(
            ns(config=str(path), overrides=["train.lr=0.002"])
        )
        assert resolved["train"]["lr"] == 0.002

    def test_flag_overrides_beat_set(self, tmp_path):
        resolved = resolve_config(
            ns(overrides=["seed=3", "out=elsewhere"], out="flagdir", seed=9)
        )
        assert resolved["seed"] == 9
        assert resolved["out"] == "flagdir"

    @pytest.mark.parametrize(
        "assignment, key_path, expected",
        [
            ("train.batch=16", ("train", "batch"), 16),
            ("model.gate_mode=hard", ("model", "gate_mode"), "hard"),
            ("bench.lengths=[8, 16]", ("bench", "lengths"), [8, 16]),
            ("data.manifest=null", ("data", "manifest"), None),
            ("train.lr=5e-3", ("train", "lr"), 5e-3),
        ],
    )
    def test_set_parses_json_values(self, assignment, key_path, expected):
        config = copy.deepcopy(DEFAULT_CONFIG)
        _apply_set(config, assignment)
        node = config
        for key in key_path:
            node = node[key]
        assert node == expected

    def test_set_without_equals_rejected(self):
        with pytest.raises(ConfigError):
            _apply_set({}, "train.lr")

    def test_set_through_scalar_rejected(self):
        with pytest.raises(ConfigError):
            _apply_set({"seed": 0}, "seed.sub=1")

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config(ns(overrides=["variant=nope"]))

    def test_config_must_be_object(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(ConfigError):
            resolve_config(ns(config=str(path)))

    def test_unparseable_config_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            resolve_config(ns(config=str(path)))


class TestVariantWiring:
    def test_full_variant_enables_everything(self):
        resolved = resolve_config(ns())
        cfg = build_model_config(resolved, d_in=10, n_classes=4)
        assert cfg.use_encoder and cfg.use_blocks
        assert cfg.block.branch_domains == ("time", "freq")
        assert cfg.block.d_model == resolved["model"]["d_model"]
        assert build_train_config(resolved).cmdt_weight == 0.1

    def test_baseline_variant_strips_encoder_and_blocks(self):
        resolved = resolve_config(ns(overrides=["variant=baseline"]))
        cfg = build_model_config(resolved, d_in=10, n_classes=4)
        assert not cfg.use_encoder and not cfg.use_blocks
        assert cfg.block.d_model == 10  # block width falls back to raw input

    def test_dual_temporal_uses_two_time_branches(self):
        resolved = resolve_config(ns(overrides=["variant=dual_temporal"]))
        cfg = build_model_config(resolved, d_in=10, n_classes=4)
        assert cfg.block.branch_domains == ("time", "time")
        assert build_train_config(resolved).cmdt_weight == 0.1

    @pytest.mark.parametrize("variant", ["baseline", "attn", "attn+temporal"])
    def test_non_contrastive_variants_zero_the_weight(self, variant):
        resolved = resolve_config(
            ns(overrides=[f"variant={variant}", "train.lambda=0.5"])
        )
        assert build_train_config(resolved).cmdt_weight == 0.0

    def test_lambda_key_feeds_the_weight(self):
        resolved = resolve_config(ns(overrides=["train.lambda=0.3"]))
        assert build_train_config(resolved).cmdt_weight == 0.3

    def test_every_variant_produces_a_valid_model_config(self):
        for variant in VARIANTS:
            resolved = resolve_config(ns(overrides=[f"variant={variant}"]))
            cfg = build_model_config(resolved, d_in=8, n_classes=3)
            assert cfg.n_classes == 3

    def test_bad_model_value_becomes_config_error(self):
        resolved = resolve_config(ns(overrides=["model.heads=x"]))
        with pytest.raises(ConfigError):
            build_model_config(resolved, d_in=8, n_classes=3)


SMALL_MODEL = [
    "--set", "model.d_model=8",
    "--set", "model.heads=2",
    "--set", "model.d_inner=4",
    "--set", "model.d_state=2",
    "--set", "model.chunk=8",
    "--set", "model.mlp_hidden=8",
]


def write_spec(tmp_path):
    spec = {
        "n_classes": 2,
        "per_class": 4,
        "seq_len": 16,
        "dim": 4,
        "carrier_bins": [2, 5],
        "envelope_ids": [0, 1],
        "noise": 0.05,
        "seed": 3,
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


class TestExitCodes:
    def test_unknown_variant_exits_2(self, capsys):
        assert main(["bench", "--set", "variant=nope"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_train_without_manifest_exits_2(self, capsys):
        assert main(["train"]) == 2
        assert "manifest" in capsys.readouterr().err

    def test_missing_manifest_file_exits_3(self, tmp_path, capsys):
        code = main(["train", "--manifest", str(tmp_path / "absent.csv")])
        assert code == 3
        assert "i/o error" in capsys.readouterr().err

    def test_bad_synth_spec_exits_2(self, tmp_path, capsys):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"n_classes": 2}))
        code = main(["synth", "--spec", str(path), "--out", str(tmp_path / "d")])
        assert code == 2
        capsys.readouterr()

    def test_unparseable_synth_spec_exits_2(self, tmp_path, capsys):
        path = tmp_path / "spec.json"
        path.write_text("{broken")
        code = main(["synth", "--spec", str(path), "--out", str(tmp_path / "d")])
        assert code == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        capsys.readouterr()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = write_spec(root)
    data_dir = root / "data"
    assert main(["synth", "--spec", str(spec_path), "--out", str(data_dir)]) == 0
    manifest = data_dir / "manifest.csv"
    run_dir = root / "run"
    code = main(
        [
            "train",
            "--manifest", str(manifest),
            "--out", str(run_dir),
            "--seed", "1",
            "--set", "folds=2",
            "--set", "train.epochs=2",
            "--set", "train.batch=4",
            *SMALL_MODEL,
        ]
    )
    assert code == 0
    return root, manifest, run_dir


class TestEndToEnd:
    def test_synth_wrote_the_corpus(self, workspace):
        root, manifest, _ = workspace
        assert manifest.exists()
        feature_files = sorted((root / "data" / "features").glob("*.tff"))
        assert len(feature_files) == 8

    def test_train_artifacts_and_stdout(self, workspace, capsys):
        _, _, run_dir = workspace
        for fold in range(2):
            assert (run_dir / f"fold{fold}_log.csv").exists()
            assert (run_dir / f"fold{fold}_best.ckpt").exists()
        assert (run_dir / "aggregate.json").exists()
        capsys.readouterr()

    def test_eval_writes_confusion(self, workspace, capsys):
        root, manifest, run_dir = workspace
        out = root / "eval"
        code = main(
            [
                "eval",
                "--checkpoint", str(run_dir / "fold0_best.ckpt"),
                "--manifest", str(manifest),
                "--out", str(out),
            ]
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert "resolved config:" in stdout
        assert "wa=" in stdout
        lines = (out / "confusion.csv").read_text().strip().splitlines()
        assert lines[0] == "true\\pred,class0,class1"
        assert len(lines) == 3

    def test_eval_on_mismatched_classes_exits_4(self, workspace, tmp_path, capsys):
        root, _, run_dir = workspace
        spec = {
            "n_classes": 3,
            "per_class": 2,
            "seq_len": 16,
            "dim": 4,
            "carrier_bins": [2, 4, 6],
            "envelope_ids": [0, 1, 2],
            "seed": 5,
        }
        spec_path = tmp_path / "spec3.json"
        spec_path.write_text(json.dumps(spec))
        other = tmp_path / "three"
        assert main(["synth", "--spec", str(spec_path), "--out", str(other)]) == 0
        code = main(
            [
                "eval",
                "--checkpoint", str(run_dir / "fold0_best.ckpt"),
                "--manifest", str(other / "manifest.csv"),
                "--out", str(tmp_path / "evalout"),
            ]
        )
        assert code == 4
        assert "mismatch" in capsys.readouterr().err

    def test_eval_on_truncated_checkpoint_exits_3(self, workspace, tmp_path, capsys):
        root, manifest, run_dir = workspace
        blob = (run_dir / "fold0_best.ckpt").read_bytes()
        broken = tmp_path / "broken.ckpt"
        broken.write_bytes(blob[: len(blob) // 2])
        code = main(
            [
                "eval",
                "--checkpoint", str(broken),
                "--manifest", str(manifest),
                "--out", str(tmp_path / "evalout"),
            ]
        )
        assert code == 3
        assert "malformed artifact" in capsys.readouterr().err

    def test_inspect_writes_both_traces(self, workspace, capsys):
        root, _, run_dir = workspace
        feature = sorted((root / "data" / "features").glob("*.tff"))[0]
        out = root / "inspect"
        code = main(
            [
                "inspect",
                "--checkpoint", str(run_dir / "fold0_best.ckpt"),
                "--feature", str(feature),
                "--out", str(out),
            ]
        )
        assert code == 0
        intensity = (out / "intensity.csv").read_text().strip().splitlines()
        assert intensity[0] == "token,input_intensity,output_intensity"
        assert len(intensity) == 17  # header plus one row per token
        spectrum = (out / "spectrum.csv").read_text().strip().splitlines()
        assert spectrum[0] == "bin,power_before,power_after"
        assert len(spectrum) == 10  # header plus seq_len // 2 + 1 bins
        capsys.readouterr()

    def test_bench_reports_every_engine(self, workspace, capsys):
        root = workspace[0]
        out = root / "bench"
        code = main(
            [
                "bench",
                "--out", str(out),
                "--set", "bench.lengths=[16]",
                "--set", "bench.repeats=3",
                "--set", "bench.warmup=1",
                "--set", "bench.d_in=6",
                "--set", "bench.ssd={\"channels\": 4, \"n_groups\": 1, "
                "\"state_dim\": 2, \"chunk\": 8}",
                *SMALL_MODEL,
            ]
        )
        assert code == 0
        lines = (out / "bench.csv").read_text().strip().splitlines()
        assert lines[0] == "kind,seq_len,median_ms,params"
        kinds = [line.split(",")[0] for line in lines[1:]]
        assert kinds == ["model_forward", "ssd_sequential", "ssd_dual", "ssd_chunked"]
        meta = json.loads((out / "bench_meta.json").read_text())
        assert meta["repeats"] == 3
        assert meta["max_ssd_discrepancy"] < 1e-9
        capsys.readouterr()
