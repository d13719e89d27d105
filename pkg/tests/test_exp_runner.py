import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest
import yaml

from ldmlab.adaptation import strategy_presets
from ldmlab.errors import ConfigError, InvalidArgumentError
from ldmlab.experiments import (
    AugmentationPlan,
    AugmentationSplit,
    load_config,
    parse_config,
    prepare_base,
    run_augmentation_study,
    run_finetune_grid,
)
from ldmlab.experiments.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from ldmlab.experiments.desk import GRID_COLUMNS
from ldmlab.metrics import FeatureSet
from ldmlab.metrics.report import EvalReport

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).parent / "fixtures"


# configuration --------------------------------------------------------------

@pytest.mark.parametrize("raw, key", [
    ({"sampler": {"stepz": 5}}, "sampler.stepz"),
    ({"colour": "red"}, "colour"),
    ({"grid": {"overrides": {"lr": 1}}}, "grid.overrides.lr"),
    ({"augmentation": {"splits": [{"real": 1, "fake": 2}]}}, "augmentation.splits[0].fake"),
])
def test_unknown_keys_named(raw, key):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.key == key and key in str(err.value)


def test_bad_kind_rejected():
    with pytest.raises(ConfigError):
        parse_config({"kind": "dance"})


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    cfg.desk()
    cfg.finetune()


def test_full_scale_config_values():
    cfg = load_config(CONFIGS / "full_scale.yaml")
    ft = cfg.finetune()
    assert (ft.learning_rate, ft.train_steps, ft.batch_size, ft.precision) == (5e-5, 60_000, 256, "bf16")
    desk = cfg.desk()
    assert desk.model.image_size == 512
    assert (desk.sampler.method, desk.sampler.num_inference_steps, desk.sampler.guidance_scale) == ("pndm", 75, 4.0)


def test_output_dir_relative_to_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("output_dir: out\n")
    assert load_config(path).output() == tmp_path / "out"


# CLI ------------------------------------------------------------------------

def _write(tmp_path, body):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(body))
    return str(path)


def test_cli_unknown_key_exit_code(tmp_path, capsys):
    code = main(["sample", "--config", _write(tmp_path, {"sampler": {"stepz": 3}})])
    assert code == EXIT_CONFIG == 2
    assert "sampler.stepz" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG


def test_cli_fid_from_feature_files(tmp_path, capsys):
    rng = np.random.default_rng(0)
    FeatureSet(rng.standard_normal((20, 3)), "x").save(tmp_path / "a.bin")
    FeatureSet(rng.standard_normal((20, 3)) + 1.0, "x").save(tmp_path / "b.bin")
    code = main(["eval", "fid", "--config", _write(tmp_path, {"eval": {"a": "a.bin", "b": "a.bin"}})])
    assert code == EXIT_OK
    assert float(capsys.readouterr().out.strip()) == 0.0
    main(["eval", "fid", "--config", _write(tmp_path, {"eval": {"a": "a.bin", "b": "b.bin"}})])
    assert float(capsys.readouterr().out.strip()) > 1.0


def test_cli_runtime_failure_exit_code(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"not a feature file")
    code = main(["eval", "fid", "--config", _write(tmp_path, {"eval": {"a": "bad.bin", "b": "bad.bin"}})])
    assert code == EXIT_RUNTIME == 3


def test_cli_report_input_missing(tmp_path):
    assert main(["report", "render", "--config", _write(tmp_path, {"report": {"input_dir": "nowhere"}})]) == 2


def test_console_script_help():
    exe = shutil.which("ldmlab")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "--help"], capture_output=True, text=True, check=True).stdout
    for command in ("corpus", "train", "sample", "eval", "augment-study", "probe-forgetting", "report"):
        assert command in out


# rendering ------------------------------------------------------------------

def test_render_matches_golden(tmp_path):
    work = tmp_path / "render"
    shutil.copytree(FIXTURES / "report_render", work)
    assert main(["report", "render", "--config", str(work / "config.yaml")]) == EXIT_OK
    produced = (work / "rendered" / "report.md").read_bytes()
    assert produced == (FIXTURES / "report_render" / "golden.md").read_bytes()


def test_eval_report_round_trip(tmp_path):
    rep = EvalReport("demo", {"a": 1.5, "b": 2.0}, "cfg", "corp",
                     tables={"t": [{"x": 1, "y": "z"}]}, flags=["note"], metadata={"k": "v"})
    rep.write(tmp_path, "demo")
    back = EvalReport.read(tmp_path / "demo.txt")
    assert back.values == rep.values and back.flags == ["note"] and back.metadata == {"k": "v"}
    assert back.tables["t"][0]["config_fingerprint"] == "cfg"
    with pytest.raises(InvalidArgumentError):
        EvalReport("demo", {"a": float("nan")})


# augmentation ---------------------------------------------------------------

class _Constant:
    def __init__(self, n_classes):
        self.n_classes = n_classes

    def predict_proba(self, images):
        return np.full((len(images), self.n_classes), 0.5)


def test_augmentation_study_with_stub_classifier(tiny_pipeline, tiny_records):
    seen = []

    def factory(x, y, vx, vy, hp):
        seen.append((x.shape, y.shape, vx.shape, hp.seed))
        return _Constant(y.shape[1])

    from ldmlab.diffusion import SamplerConfig

    plan = AugmentationPlan([AugmentationSplit(20), AugmentationSplit(0, 6, tiny_pipeline),
                             AugmentationSplit(20, 6, tiny_pipeline)],
                            sampler=SamplerConfig("pndm", 5, 4.0), seed=1)
    report = run_augmentation_study(plan, tiny_records[:40], tiny_records[40:], factory, log=lambda m: None)
    rows = report.tables["mix_results"]
    assert [r["label"] for r in rows] == ["R20+S0", "R0+S6", "R20+S6"]
    assert list(rows[0]) == ["label", "real_n", "synth_n", "auroc", "accuracy", "delta",
                             "config_fingerprint", "corpus_fingerprint"]
    assert [s[0][0] for s in seen] == [20, 6, 26]
    assert len({s[2] for s in seen}) == 1
    assert [s[3] for s in seen] == [1, 2, 3]
    assert all(r["auroc"] == 0.5 and r["delta"] == 0.0 for r in rows)
    assert report.metadata["reference.baseline_auroc"] == 0.73


def test_augmentation_requires_checkpoint_for_synthetic(tiny_records):
    plan = AugmentationPlan([AugmentationSplit(10), AugmentationSplit(0, 5, "missing.ckpt")])
    with pytest.raises(ConfigError):
        run_augmentation_study(plan, tiny_records[:40], tiny_records[40:], lambda *a: None, log=lambda m: None)


def test_augmentation_pool_too_small(tiny_records):
    plan = AugmentationPlan([AugmentationSplit(500)])
    with pytest.raises(InvalidArgumentError):
        run_augmentation_study(plan, tiny_records[:40], tiny_records[40:], lambda *a: None, log=lambda m: None)


# grid -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_base(tmp_path_factory):
    cfg = load_config(CONFIGS / "tiny.yaml")
    return prepare_base(cfg.desk(), cache_dir=tmp_path_factory.mktemp("tiny-base"), log=lambda m: None)


def test_grid_rows_schema(tiny_base):
    presets = strategy_presets()
    configs = [presets[n].replace(train_steps=4, batch_size=8) for n in ("unet_only_60k", "textual_inversion")]
    rows = run_finetune_grid(configs, tiny_base, log=lambda m: None)
    assert [r["name"] for r in rows] == ["original", "unet_only_60k", "textual_inversion"]
    for r in rows:
        assert tuple(r) == GRID_COLUMNS
        assert r["status"] == "ok"
        assert np.isfinite(r["fid.oracle"]) and 0 <= r["auroc.macro"] <= 1
    assert rows[0]["config_fingerprint"] != rows[1]["config_fingerprint"]


def test_grid_unknown_preset(tmp_path):
    from ldmlab.experiments.desk import resolve_presets

    with pytest.raises(ConfigError) as err:
        resolve_presets(["original", "lr9_9k"])
    assert err.value.key == "grid.presets"
