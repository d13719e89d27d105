"""One pass/fail line per acceptance criterion, at the stated tolerances.

Criteria 5, 6, 11 and 12 share the desk-scale run built by the ``desk_run``
fixture (base model, 2000-step fine-tune, three evaluated generators).
"""
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml
from numpy.lib.stride_tricks import sliding_window_view

from _gradcheck import check_gradients, sample_entries
from ldmlab.adaptation import run_strategy, strategy_presets
from ldmlab.data import CorpusSpec, cap_no_finding, filter_reports, general_corpus_generate, toy_corpus_generate
from ldmlab.data.grammar import CLASS_INDEX, PRESENT, TOY_CLASSES
from ldmlab.diffusion import ModelPreset, Pipeline, add_noise, training_loss
from ldmlab.experiments import AugmentationPlan, AugmentationSplit, render_directory, run_augmentation_study
from ldmlab.experiments.cli import main
from ldmlab.metrics import (
    EvalReport,
    GaussianStats,
    RetrievalPool,
    auroc,
    binary_auroc,
    chexpert_at_10,
    fact_ent,
    fact_entnli,
    fit_gaussian,
    forgetting_probe,
    frechet_distance,
    label_f1,
    ms_ssim,
    retrieval_precision_at_k,
    rouge_l,
    toy_label_matrix,
)
from ldmlab.metrics.probe import forgetting_table, text_embeddings
from ldmlab.nn.checkpoint import file_hash
from ldmlab.nn.layers import changed_parameters, snapshot

ROOT = Path(__file__).resolve().parents[1]


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 --------------------------------------------------------------------------

def test_criterion_01_frechet_closed_form(criterion):
    def run():
        g = lambda m, v: GaussianStats(np.array([m]), np.array([[v]]))  # noqa: E731
        checks = {
            "mean shift": abs(frechet_distance(g(0, 1), g(1, 1)) - 1.0) < 1e-8,
            "variance": abs(frechet_distance(g(0, 1), g(0, 4)) - 1.0) < 1e-8,
        }
        rng = np.random.default_rng(0)
        a = fit_gaussian(rng.standard_normal((200, 5)))
        b = fit_gaussian(rng.standard_normal((300, 5)) @ rng.standard_normal((5, 5)) + 0.3)
        checks["identity"] = abs(frechet_distance(a, a)) < 1e-8
        checks["symmetry"] = abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-10
        mu1, mu2 = np.zeros(3), np.array([1.0, -0.5, 2.0])
        s1 = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]])
        s2 = np.diag([1.0, 3.0, 0.8])
        exact = frechet_distance(GaussianStats(mu1, s1), GaussianStats(mu2, s2))
        mc = frechet_distance(fit_gaussian(rng.multivariate_normal(mu1, s1, 10_000)),
                              fit_gaussian(rng.multivariate_normal(mu2, s2, 10_000)))
        checks["monte carlo"] = abs(mc - exact) / exact < 0.05
        return checks, mc, exact

    (checks, mc, exact), secs = _timed(run)
    ok = all(checks.values()) and secs < 10
    criterion(1, ok, f"{sum(checks.values())}/{len(checks)} checks, MC {mc:.4f} vs exact {exact:.4f}, {secs:.2f}s")
    assert ok, checks


# 2 --------------------------------------------------------------------------

def _transcribed_ssim(x, y, size=11, sigma=1.5, L=1.0):
    """Single-scale SSIM over every full 11x11 window, Gaussian-weighted
    statistics computed from explicit window views."""
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    r = np.arange(size) - size // 2
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    w = w / w.sum()
    wx, wy = sliding_window_view(x, (size, size)), sliding_window_view(y, (size, size))
    mx = np.einsum("ijkl,kl->ij", wx, w)
    my = np.einsum("ijkl,kl->ij", wy, w)
    vx = np.einsum("ijkl,kl->ij", (wx - mx[..., None, None]) ** 2, w)
    vy = np.einsum("ijkl,kl->ij", (wy - my[..., None, None]) ** 2, w)
    cxy = np.einsum("ijkl,kl->ij", (wx - mx[..., None, None]) * (wy - my[..., None, None]), w)
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(s.mean())


def test_criterion_02_ms_ssim(criterion):
    def run():
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(20):
            a = rng.random((32, 32))
            b = np.clip(a + rng.normal(0, rng.uniform(0.05, 0.5), a.shape), 0, 1)
            worst = max(worst, abs(ms_ssim(a, b, scales=1) - _transcribed_ssim(a, b)))
        img = rng.random((176, 176))
        return worst, abs(ms_ssim(img, img) - 1.0)

    (worst, self_err), secs = _timed(run)
    ok = worst < 1e-6 and self_err < 1e-6 and secs < 30
    criterion(2, ok, f"single-scale max |diff| {worst:.2e} over 20 pairs, self error {self_err:.1e}, {secs:.2f}s")
    assert ok


# 3 --------------------------------------------------------------------------

def test_criterion_03_gradients(criterion):
    def run():
        pipe = Pipeline.build(ModelPreset.tiny(), seed=5).to(torch.float64)
        g = torch.Generator().manual_seed(0)
        enc = pipe.text_encoder
        ids = pipe.prompt_ids(["large left pleural effusion.", "no acute cardiopulmonary process."])
        readout = torch.randn(*ids.shape, enc.d_text, dtype=torch.float64, generator=g)
        named_enc = {n: p.requires_grad_(True) for n, p in enc.named_parameters()}
        used = sorted(set(ids.flatten().tolist()))
        d = enc.d_text

        def restrict(name, p):
            if name == "token_embedding.weight":
                return [r * d + c for r in used for c in range(d)]
            return range(p.numel())

        entries = sample_entries(named_enc, 24, seed=1, restrict=restrict)
        err_enc, _ = check_gradients(lambda: (enc(ids) * readout).sum(), named_enc, entries)

        x0 = torch.randn(2, *pipe.latent_shape, dtype=torch.float64, generator=g)
        noise = torch.randn(2, *pipe.latent_shape, dtype=torch.float64, generator=g)
        t = torch.tensor([5, 70])
        with torch.no_grad():
            ctx = pipe.encode_prompts(["cardiomegaly.", "small right pneumothorax."])
        named_unet = {n: p.requires_grad_(True) for n, p in pipe.unet.named_parameters()}
        entries = sample_entries(named_unet, 24, seed=2)
        err_unet, _ = check_gradients(
            lambda: training_loss(pipe.unet(add_noise(x0, noise, t, pipe.schedule), t, ctx), noise),
            named_unet, entries)
        return err_enc, err_unet

    (err_enc, err_unet), secs = _timed(run)
    ok = err_enc < 1e-3 and err_unet < 1e-3 and secs < 120
    criterion(3, ok, f"max rel err text encoder {err_enc:.1e}, U-Net {err_unet:.1e} (24 params each), {secs:.1f}s")
    assert ok


# 4 --------------------------------------------------------------------------

def _flat(pipe):
    out = {}
    for comp, module in pipe.components().items():
        out.update({f"{comp}.{k}": v for k, v in snapshot(module).items()})
    return out


def test_criterion_04_freeze_contracts(criterion, tiny_pipeline, tiny_records):
    def run():
        failures = []
        for name, preset in strategy_presets().items():
            config = preset.replace(train_steps=50, batch_size=8)
            pipe = tiny_pipeline.copy()
            before = _flat(pipe)
            record, out = run_strategy(config, tiny_records[:32], pipe)
            after = _flat(out)
            declared = set(record.trainable)
            table = "text_encoder.token_embedding.weight"
            if config.strategy == "textual_inversion":
                n = before[table].shape[0]
                if not torch.equal(before.pop(table), after[table][:n]):
                    failures.append(f"{name}: existing embedding rows moved")
                after.pop(table)
            plugin_keys = [k for k in after if k.startswith("conditioner.plugin.")]
            if plugin_keys:
                from ldmlab.adaptation import load_plugin

                fresh = {f"conditioner.plugin.{k}": v for k, v in snapshot(load_plugin(config.plugin)).items()}
                if changed_parameters(fresh, {k: after.pop(k) for k in plugin_keys}):
                    failures.append(f"{name}: external encoder changed")
            for k in [k for k in after if k.startswith("conditioner.head.")]:
                if k not in declared:
                    failures.append(f"{name}: undeclared {k}")
                after.pop(k)
            leaked = changed_parameters(before, after) - declared
            if leaked:
                failures.append(f"{name}: {sorted(leaked)[:3]}")
        return failures

    failures, secs = _timed(run)
    n = len(strategy_presets())
    ok = not failures and secs < 300
    criterion(4, ok, f"{n - len({f.split(':')[0] for f in failures})}/{n} presets frozen outside declared set "
                     f"after 50 steps, {secs:.0f}s")
    assert ok, failures


# 5, 6 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_fidelity_trend(criterion, desk_run):
    base_fid = desk_run.rows["original"]["fid.oracle"]
    tuned_fid = desk_run.rows["finetuned"]["fid.oracle"]
    ratio = base_fid / tuned_fid
    steps = len(desk_run.record.losses)
    secs = desk_run.timings["total"]
    ok = ratio >= 5 and steps <= 2000 and secs <= 2 * 3600
    criterion(5, ok, f"oracle-feature FID {base_fid:.1f} -> {tuned_fid:.1f} ({ratio:.1f}x) after {steps} steps, "
                     f"randproj {desk_run.rows['original']['fid.randproj']:.3f} -> "
                     f"{desk_run.rows['finetuned']['fid.randproj']:.3f}, run {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_06_conditioning_trend(criterion, desk_run):
    tuned = desk_run.rows["finetuned"]["auroc.macro"]
    base = desk_run.rows["original"]["auroc.macro"]
    rand = desk_run.rows["random"]["auroc.macro"]
    ok = tuned >= 0.80 and abs(base - 0.5) <= 0.05
    criterion(6, ok, f"macro AUROC fine-tuned {tuned:.3f}, untrained baseline {base:.3f} "
                     f"(random weights {rand:.3f}, real images {desk_run.base.info['real_test_auroc']:.3f})")
    assert ok


# 7 --------------------------------------------------------------------------

def test_criterion_07_retrieval(criterion):
    def run():
        rng = np.random.default_rng(7)
        centres = rng.standard_normal((6, 32))
        ql, cl = rng.integers(0, 6, 200), rng.integers(0, 6, 400)
        q = centres[ql] + 1.5 * rng.standard_normal((200, 32))
        c = centres[cl] + 1.5 * rng.standard_normal((400, 32))
        c[10] = c[11]  # a tied pair
        got = retrieval_precision_at_k(RetrievalPool(q, ql, c, cl), ks=(5, 10, 50))
        expected = {}
        for k in (5, 10, 50):
            hits = 0
            for i in range(200):
                sims = []
                for j in range(400):
                    sims.append((float(np.dot(q[i], c[j]) / (np.linalg.norm(q[i]) * np.linalg.norm(c[j]))), j))
                top = sorted(sims, key=lambda s: (-s[0], s[1]))[:k]
                hits += sum(int(cl[j] == ql[i]) for _, j in top)
            expected[k] = hits / (200 * k)
        return got, expected

    (got, expected), secs = _timed(run)
    ok = all(got[k] == expected[k] for k in expected) and secs < 10
    criterion(7, ok, "p@5/10/50 = " + "/".join(f"{got[k]:.4f}" for k in (5, 10, 50))
              + f" equal to brute force, {secs:.2f}s")
    assert ok


# 8 --------------------------------------------------------------------------

def test_criterion_08_text_metrics(criterion, tiny_records):
    def run():
        exact = {
            "fact_ent": fact_ent("Cardiomegaly. Small left effusion.", "Cardiomegaly. Mild pneumonia.") == 0.5,
            "label_f1": label_f1("Cardiomegaly. Large left effusion.", "Cardiomegaly.") == 2 / 3,
            "rouge_l": rouge_l("the cat sat down", "the cat sat up") == 0.75,
            "auroc": binary_auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75,
        }
        texts = [r.impression for r in toy_corpus_generate(CorpusSpec(n_train=600, n_test=0, image_size=8, seed=8))]
        rng = np.random.default_rng(8)
        pairs = rng.integers(0, len(texts), (1000, 2))
        violations = sum(fact_entnli(texts[i], texts[j]) > fact_ent(texts[i], texts[j]) + 1e-12 for i, j in pairs)
        return exact, violations

    (exact, violations), secs = _timed(run)
    ok = all(exact.values()) and violations == 0 and secs < 30
    criterion(8, ok, f"{sum(exact.values())}/4 hand examples exact, fact_entnli > fact_ent in "
                     f"{violations}/1000 pairs, {secs:.1f}s")
    assert ok, exact


# 9 --------------------------------------------------------------------------

def test_criterion_09_data_boundaries(criterion):
    from ldmlab.data import ReportRecord

    def rec(i, text, nf=False):
        labels = np.full(14, -1, dtype=np.int8)
        if nf:
            labels[CLASS_INDEX["No Finding"]] = PRESENT
        return ReportRecord(f"x{i:03d}", text, "PA", labels, "train")

    def run():
        checks = {}
        kept = filter_reports([rec(0, "Slight"), rec(1, "Stable.")])
        checks["chars"] = [r.impression for r in kept] == ["Stable."] and kept.dropped_short == 1
        ok77 = " ".join(["edema"] * 75)
        kept = filter_reports([rec(2, ok77), rec(3, ok77 + " edema")])
        checks["tokens"] = [r.record_id for r in kept] == ["x002"] and kept.dropped_tokens == 1
        pool = [rec(i, "Normal chest radiograph.", nf=True) for i in range(100)] + [rec(100 + i, "Edema.")
                                                                                     for i in range(20)]
        a, b = cap_no_finding(pool, 40, seed=3), cap_no_finding(pool, 40, seed=3)
        checks["cap exact"] = sum(r.is_no_finding for r in a) == 40 and len(a) == 60
        checks["cap seed-stable"] = [r.record_id for r in a] == [r.record_id for r in b]
        checks["cap 0"] = sum(r.is_no_finding for r in cap_no_finding(pool, 0)) == 0
        checks["cap above"] = cap_no_finding(pool, 150) == pool
        return checks

    checks, secs = _timed(run)
    ok = all(checks.values()) and secs < 5
    criterion(9, ok, f"{sum(checks.values())}/{len(checks)} boundary checks, {secs:.2f}s")
    assert ok, checks


# 10 -------------------------------------------------------------------------

def test_criterion_10_determinism(criterion, tmp_path):
    def run_once(tag):
        work = tmp_path / tag
        work.mkdir()
        cfg = yaml.safe_load((ROOT / "configs" / "tiny.yaml").read_text())
        cfg.update(output_dir=str(work / "out"), cache_dir=str(work / "cache"))
        path = work / "tiny.yaml"
        path.write_text(yaml.safe_dump(cfg))
        assert main(["train", "--config", str(path)]) == 0
        assert main(["sample", "--config", str(path)]) == 0
        ckpt = work / "out" / "checkpoints" / f"{cfg['finetune']['preset']}-final.ckpt"
        return file_hash(ckpt), (work / "out" / "samples" / "images.npy").read_bytes()

    (first, second), secs = _timed(lambda: (run_once("a"), run_once("b")))
    same_ckpt = first[0] == second[0]
    same_images = first[1] == second[1]
    ok = same_ckpt and same_images
    criterion(10, ok, f"checkpoint hash {'identical' if same_ckpt else 'DIFFERS'} ({first[0][:12]}), "
                      f"images {'bitwise identical' if same_images else 'DIFFER'}, two CLI runs in {secs:.0f}s")
    assert ok


# 11 -------------------------------------------------------------------------

class _PixelStub:
    """Deterministic stand-in classifier: class scores are fixed projections of pixels."""

    def __init__(self, n_classes, seed):
        self.w = np.random.default_rng(seed).standard_normal((n_classes,))
        self.calls = 0

    def predict_proba(self, images):
        self.calls += 1
        flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        z = np.outer(flat.mean(1) - 0.2, self.w) + np.sin(flat[:, :6] * 13.0)
        return 1 / (1 + np.exp(-z))


@pytest.mark.slow
def test_criterion_11_augmentation(criterion, desk_run):
    base = desk_run.base
    t0 = time.perf_counter()
    stubs = []

    def factory(x, y, vx, vy, hp):
        stubs.append(_PixelStub(y.shape[1], hp.seed))
        return stubs[-1]

    sampler = base.config.sampler
    small = AugmentationPlan([AugmentationSplit(100), AugmentationSplit(0, 50, desk_run.finetuned),
                              AugmentationSplit(100, 50, desk_run.finetuned)], sampler=sampler, seed=3)
    report = run_augmentation_study(small, base.splits.train, base.splits.test, factory, log=lambda m: None)
    test_x, test_y = base.test_images, base.test_truth
    direct = [auroc(s.predict_proba(test_x), test_y, TOY_CLASSES).macro for s in stubs]
    column = [r["auroc"] for r in report.tables["mix_results"]]
    stub_exact = column == direct

    plan = AugmentationPlan([AugmentationSplit(400, label="R400"),
                             AugmentationSplit(0, 400, desk_run.finetuned, label="S400"),
                             AugmentationSplit(400, 400, desk_run.finetuned, label="R400+S400")],
                            classifier=base.config.classifier, sampler=sampler, seed=0)
    full = run_augmentation_study(plan, base.splits.train, base.splits.test, log=lambda m: None)
    rows = full.tables["mix_results"]
    secs = time.perf_counter() - t0
    complete = [r["label"] for r in rows] == ["R400", "S400", "R400+S400"] and all(
        np.isfinite(r["auroc"]) for r in rows)
    ok = stub_exact and complete and len(TOY_CLASSES) == 6 and secs < 20 * 60
    summary = ", ".join(f"{r['label']} {r['auroc']:.3f}" for r in rows)
    criterion(11, ok, f"stub column == direct auroc(): {stub_exact}; full study rows: {summary}; {secs:.0f}s")
    assert ok


# 12 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_12_chexpert_probe(criterion, desk_run, tmp_path):
    t0 = time.perf_counter()
    labels = np.repeat(np.eye(4, dtype=bool), 15, axis=0)
    emb = labels + 0.05 * np.random.default_rng(0).standard_normal(labels.shape)
    per_class, _ = chexpert_at_10(emb, labels, list("abcd"))
    perfect = all(v == 100.0 for v in per_class.values())

    records = (desk_run.base.splits.train + desk_run.base.splits.test)[:1000]
    y = toy_label_matrix(records).astype(bool)
    shuffled = y[np.random.default_rng(1).permutation(len(y))]
    emb = text_embeddings(desk_run.finetuned, [r.impression for r in records])
    per_class, _ = chexpert_at_10(emb, shuffled, TOY_CLASSES)
    gaps = {c: abs(per_class[c] - 100 * shuffled[:, j].mean()) for j, c in enumerate(TOY_CLASSES)}
    shuffle_ok = len(records) == 1000 and max(gaps.values()) <= 5

    general = general_corpus_generate(400, seed=202, size=desk_run.base.config.model.image_size)
    reports = forgetting_probe(desk_run.checkpoints, desk_run.base.splits.test, general)
    rows = forgetting_table(reports)
    out = tmp_path / "probe"
    EvalReport("forgetting_probe", {}, "probe", desk_run.base.corpus_fingerprint,
               tables={"forgetting": rows}).write(out, "forgetting")
    md = render_directory(out, out, plots=True, title="Forgetting").read_text()
    rendered = len(rows) >= 3 and (out / "forgetting.forgetting.png").exists() and md.count("\n| ") >= len(rows)
    secs = time.perf_counter() - t0
    ok = perfect and shuffle_ok and rendered and secs < 60
    series = ", ".join(f"{r['step']}: {r['in_domain_macro']:.1f}/{r['general_macro']:.1f}" for r in rows)
    criterion(12, ok, f"perfect clusters 100: {perfect}; shuffled max gap {max(gaps.values()):.2f}; "
                      f"series (step: in-domain/general) {series}; {secs:.1f}s")
    assert ok
