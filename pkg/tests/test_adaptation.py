import pytest
import torch

from ldmlab.adaptation import (
    CONCEPT_TOKEN,
    FineTuneConfig,
    ToyDomainEncoder,
    declared_trainable,
    dreambooth_train,
    load_plugin,
    restore_text_encoder,
    run_strategy,
    strategy_presets,
    swap_text_encoder,
    textual_inversion_train,
    textual_projection_train,
    train,
)
from ldmlab.diffusion import training_loss
from ldmlab.errors import ContractError, InvalidArgumentError
from ldmlab.nn.layers import changed_parameters, snapshot

SHORT = dict(train_steps=3, batch_size=4)


def _qualified(pipe):
    out = {}
    for comp, module in pipe.components().items():
        out.update({f"{comp}.{k}": v for k, v in snapshot(module).items()})
    return out


# freeze contracts -----------------------------------------------------------

@pytest.mark.parametrize("name", sorted(strategy_presets()))
def test_only_declared_parameters_change(name, tiny_pipeline, tiny_records):
    config = strategy_presets()[name].replace(**SHORT)
    pipe = tiny_pipeline.copy()
    before = _qualified(pipe)
    record, out = run_strategy(config, tiny_records[:16], pipe)
    after = _qualified(out)

    if config.strategy == "textual_inversion":
        table = "text_encoder.token_embedding.weight"
        old_rows = before[table].shape[0]
        assert torch.equal(after[table][:old_rows], before[table])
        assert after[table].shape[0] == old_rows + 1
        before.pop(table), after.pop(table)
        assert changed_parameters(before, after) == set()
        assert record.trainable == [f"{table}[new_row]"]
        return

    if "conditioner" in out.components():
        fresh = load_plugin(config.plugin)
        plugin_after = snapshot(out.conditioner.plugin)
        assert changed_parameters(snapshot(fresh), plugin_after) == set()
        for k in [k for k in after if k.startswith("conditioner.plugin.")]:
            after.pop(k)
        head = {k for k in after if k.startswith("conditioner.")}
        assert head <= set(record.trainable)
        for k in head:
            after.pop(k)

    changed = changed_parameters(before, after)
    declared = set(record.trainable)
    assert changed <= declared
    if config.train_steps and config.unet_mode != "frozen":
        assert any(k.startswith("unet.") for k in changed)
    if config.text_encoder_mode == "frozen" or config.text_encoder_source == "external_plugin":
        assert not any(k.startswith("text_encoder.") for k in declared)
    assert not any(k.startswith("vae.") for k in declared | changed)


def test_declared_trainable_by_mode(tiny_pipeline):
    pipe = tiny_pipeline
    both = declared_trainable(FineTuneConfig(), pipe)
    assert any(k.startswith("unet.") for k in both) and any(k.startswith("text_encoder.") for k in both)
    unet_only = declared_trainable(FineTuneConfig(text_encoder_mode="frozen"), pipe)
    assert unet_only and all(k.startswith("unet.") for k in unet_only)
    assert declared_trainable(FineTuneConfig(unet_mode="frozen", text_encoder_mode="frozen"), pipe) == {}


def test_config_rejects_incoherent_modes():
    with pytest.raises(InvalidArgumentError):
        FineTuneConfig(strategy="textual_inversion")
    with pytest.raises(InvalidArgumentError):
        FineTuneConfig(text_encoder_source="external_plugin", text_encoder_mode="finetune")
    with pytest.raises(InvalidArgumentError):
        FineTuneConfig(unet_mode="scratch")


def test_builtin_config_refuses_swapped_pipeline(tiny_pipeline, tiny_records):
    swapped = swap_text_encoder(tiny_pipeline.copy(), ToyDomainEncoder(output_dim=16))
    with pytest.raises(InvalidArgumentError):
        train(FineTuneConfig(**SHORT), tiny_records[:8], swapped)


# textual inversion ----------------------------------------------------------

def test_textual_inversion_adds_and_learns_one_row(tiny_pipeline, tiny_records):
    pipe = tiny_pipeline.copy()
    vocab = pipe.tokenizer.vocab_size
    mean_row = pipe.text_encoder.token_embedding.weight.detach().mean(0).clone()
    pairs = [(f"{CONCEPT_TOKEN} {r.impression}", r.image) for r in tiny_records[:8]]
    config = strategy_presets()["textual_inversion"].replace(**SHORT)
    record = textual_inversion_train(config, pairs, CONCEPT_TOKEN, pipe)
    assert pipe.tokenizer.vocab_size == vocab + 1
    assert pipe.tokenizer.vocabulary[CONCEPT_TOKEN] == vocab
    new_row = pipe.text_encoder.token_embedding.weight[vocab]
    assert not torch.equal(new_row, mean_row)
    assert record.hashes_before["unet"] == record.hashes_after["unet"]
    with pytest.raises(InvalidArgumentError):
        textual_inversion_train(config, pairs, CONCEPT_TOKEN, pipe)


# dreambooth -----------------------------------------------------------------

def test_dreambooth_zero_prior_weight_matches_unet_only(tiny_pipeline, tiny_records):
    inst, prior = tiny_records[:8], tiny_records[8:16]
    base = FineTuneConfig(text_encoder_mode="frozen", prompt_dropout=0.0, seed=5, **SHORT)
    a, b = tiny_pipeline.copy(), tiny_pipeline.copy()
    rec_a = dreambooth_train(base.replace(strategy="dreambooth", prior_weight=0.0), inst, prior, a)
    rec_b = train(base, inst, b)
    assert rec_a.losses == rec_b.losses
    assert rec_a.hashes_after["unet"] == rec_b.hashes_after["unet"]


def test_dreambooth_unit_weight_loss_is_sum(tiny_pipeline, tiny_records):
    seen = []
    config = FineTuneConfig(strategy="dreambooth", text_encoder_mode="frozen", prior_weight=1.0, **SHORT)

    def cb(step, info):
        with torch.no_grad():
            seen.append(float(training_loss(*info["instance"]) + training_loss(*info["prior"])))

    rec = dreambooth_train(config, tiny_records[:8], tiny_records[8:16], tiny_pipeline.copy(), callback=cb)
    assert rec.losses == pytest.approx(seen, rel=1e-6)


def test_dreambooth_negative_weight_rejected(tiny_pipeline, tiny_records):
    config = FineTuneConfig(strategy="dreambooth", text_encoder_mode="frozen", **SHORT)
    config.prior_weight = -0.5
    with pytest.raises(InvalidArgumentError):
        dreambooth_train(config, tiny_records[:4], tiny_records[4:8], tiny_pipeline.copy())


# external encoders ----------------------------------------------------------

def test_projection_output_dim_and_frozen_plugin(tiny_pipeline, tiny_records):
    plugin = load_plugin("radbert-toy")
    ref = snapshot(plugin)
    config = strategy_presets()["textual_projection"].replace(**SHORT)
    record, swapped = textual_projection_train(config, tiny_records[:8], plugin, tiny_pipeline.copy())
    assert plugin.calls >= 1
    assert changed_parameters(ref, snapshot(plugin)) == set()
    with torch.no_grad():
        ctx = swapped.encode_prompts(["no edema."])
    assert ctx.shape == (1, 77, tiny_pipeline.preset.d_text)
    assert record.trainable == ["conditioner.head.bias", "conditioner.head.weight"]


def test_identity_projection_reproduces_plugin_embeddings(tiny_pipeline):
    plugin = ToyDomainEncoder(output_dim=tiny_pipeline.preset.d_text, seed=4)
    swapped = swap_text_encoder(tiny_pipeline, plugin)
    prompts = ["small left effusion.", "cardiomegaly."]
    with torch.no_grad():
        torch.testing.assert_close(swapped.encode_prompts(prompts), plugin(prompts), rtol=0, atol=0)


def test_swap_and_restore_round_trip(tiny_pipeline):
    prompts = ["mild pulmonary edema."]
    with torch.no_grad():
        original = tiny_pipeline.encode_prompts(prompts)
        plugin = load_plugin("sapbert-toy")
        swapped = swap_text_encoder(tiny_pipeline, plugin)
        swapped.encode_prompts(prompts)
        assert plugin.calls >= 1
        assert swapped.unet is tiny_pipeline.unet
        back = restore_text_encoder(swapped).encode_prompts(prompts)
    assert torch.equal(original, back)


def test_swap_rejects_short_token_limit(tiny_pipeline):
    with pytest.raises(ContractError):
        swap_text_encoder(tiny_pipeline, ToyDomainEncoder(output_dim=16, max_tokens=32))


# training runs --------------------------------------------------------------

def test_train_from_random_is_deterministic(tiny_pipeline, tiny_records):
    config = FineTuneConfig(unet_mode="train_from_random", seed=3, **SHORT)
    a, b = tiny_pipeline.copy(), tiny_pipeline.copy()
    ra = train(config, tiny_records[:8], a)
    rb = train(config, tiny_records[:8], b)
    assert ra.losses == rb.losses
    assert ra.hashes_after == rb.hashes_after
    assert ra.hashes_before["unet"] != tiny_pipeline.component_hashes()["unet"]


def test_checkpoints_in_memory(tiny_pipeline, tiny_records):
    config = FineTuneConfig(**SHORT)
    record = train(config, tiny_records[:8], tiny_pipeline.copy(), checkpoint_steps=(0, 2, 3),
                   keep_checkpoints_in_memory=True)
    assert sorted(record.checkpoints) == [0, 2, 3]
    assert record.checkpoints[0].component_hashes() == tiny_pipeline.component_hashes()
    assert record.checkpoints[3].component_hashes() == record.hashes_after


def test_checkpoint_files_and_loss_csv(tmp_path, tiny_pipeline, tiny_records):
    config = FineTuneConfig(name="probe", **SHORT)
    record = train(config, tiny_records[:8], tiny_pipeline.copy(), checkpoint_dir=tmp_path, checkpoint_steps=(1,))
    assert (tmp_path / "probe-final.ckpt").exists()
    assert (tmp_path / "probe-step000001.ckpt").exists()
    lines = (tmp_path / "probe-loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 1 + len(record.losses)


def test_presets_cover_strategy_matrix():
    presets = strategy_presets()
    assert presets["original"].train_steps == 0
    lr = presets["lr5e-5_60k"]
    assert (lr.nominal_learning_rate, lr.nominal_train_steps) == (5e-5, 60_000)
    assert presets["lr1e-4_1k"].learning_rate > presets["lr5e-5_1k"].learning_rate
    assert presets["lr5e-5_1k"].train_steps < presets["lr5e-5_12.5k"].train_steps < lr.train_steps
    assert presets["rnd_unet_only_60k"].unet_mode == "train_from_random"
    assert presets["multiview_60k"].corpus_views == ("PA", "AP", "LAT")
    assert presets["sapbert_60k"].plugin == "sapbert-toy"
