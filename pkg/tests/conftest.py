import os
import time
from dataclasses import dataclass, field

import numpy as np
import pytest
import torch

from ldmlab.data import CorpusSpec, filter_reports, toy_corpus_generate
from ldmlab.diffusion import ModelPreset, Pipeline

ACCEPTANCE_LINES: dict = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def criterion():
    return record_criterion


@pytest.fixture(scope="session")
def tiny_pipeline():
    return Pipeline.build(ModelPreset.tiny(), seed=0)


@pytest.fixture(scope="session")
def tiny_records():
    spec = CorpusSpec(n_train=64, n_test=0, image_size=16)
    return filter_reports(toy_corpus_generate(spec)).records


@dataclass
class DeskRun:
    base: object
    finetuned: object
    record: object
    checkpoints: dict
    rows: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Base model, a 2000-step fine-tune with snapshots, and evaluations of
    the general-pretrained, random-weight and fine-tuned generators."""
    from ldmlab.adaptation import strategy_presets, train
    from ldmlab.experiments.desk import DeskConfig, evaluate_pipeline, generate_for_records, prepare_base

    t0 = time.perf_counter()
    config = DeskConfig()
    cache = os.environ.get("LDMLAB_TEST_CACHE") or tmp_path_factory.mktemp("desk-cache")
    base = prepare_base(config, cache_dir=cache, log=lambda msg: None)
    timings = {"base": time.perf_counter() - t0}

    preset = strategy_presets()["lr5e-5_60k"]
    pipe = base.pipeline.copy()
    record = train(preset, base.splits.train, pipe, checkpoint_steps=(0, 200, 1000, 2000),
                   keep_checkpoints_in_memory=True)
    timings["finetune"] = time.perf_counter() - t0 - timings["base"]

    random_weights = Pipeline.build(config.model, seed=config.seed + 1)
    random_weights.vae.load_state_dict(base.pipeline.vae.state_dict())

    run = DeskRun(base, pipe, record, record.checkpoints, timings=timings)
    for name, model in (("original", base.pipeline), ("random", random_weights), ("finetuned", pipe)):
        images = generate_for_records(model, base.eval_records(), config.sampler, config.seed)
        run.images[name] = images
        run.rows[name] = evaluate_pipeline(model, base, name, config.seed, images=images)
    timings["total"] = time.perf_counter() - t0
    return run


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    np.random.seed(0)
    yield
