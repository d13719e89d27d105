"""ldmlab command line.

Every subcommand reads ``--config`` (YAML, see ``experiments.config``) and
``--seed`` (overrides the config seed). Exit codes: 0 success, 2 config
error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _reports_dir(cfg):
    out = cfg.output() / "reports"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(cfg, path):
    path = Path(path)
    if not path.is_absolute() and cfg.source:
        path = Path(cfg.source).parent / path
    return path


def _base(cfg):
    from .desk import prepare_base

    cache = _resolve(cfg, cfg.cache_dir) if cfg.cache_dir else cfg.output() / "cache"
    return prepare_base(cfg.desk(), cache_dir=cache)


def _checkpoint(cfg, section):
    path = cfg.section(section).get("checkpoint")
    if path is None:
        path = cfg.output() / "checkpoints" / f"{cfg.finetune().name}-final.ckpt"
    path = _resolve(cfg, path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}", key=f"{section}.checkpoint")
    from ..nn.checkpoint import load_pipeline

    return load_pipeline(path)[0], path


def cmd_corpus_build(cfg, args):
    from ..data import count_table, filter_reports, make_splits, toy_corpus_generate, write_manifest
    from ..data.filtering import TABLE_ROWS
    from ..data.records import corpus_fingerprint
    from ..metrics.report import EvalReport

    spec = cfg.desk().corpus
    raw = toy_corpus_generate(spec)
    filtered = filter_reports(raw)
    splits = make_splits(filtered.records, spec)
    out = cfg.output() / "corpus"
    for name, records in splits.named().items():
        write_manifest(records, out / name)
    table = count_table(splits.named())
    rows = [{"row": r, **{s: table[s][r] for s in table}} for r in TABLE_ROWS]
    report = EvalReport("corpus", {"raw": len(raw), "dropped_short": filtered.dropped_short,
                                   "dropped_tokens": filtered.dropped_tokens, "train": len(splits.train),
                                   "test": len(splits.test)},
                        "seed%d" % cfg.seed, corpus_fingerprint(splits.train + splits.test),
                        tables={"counts": rows})
    report.write(_reports_dir(cfg), "corpus")
    print(f"corpus: {len(splits.train)} train / {len(splits.test)} test records "
          f"(dropped {filtered.dropped_short} short, {filtered.dropped_tokens} over token limit) -> {out}")


def cmd_train(cfg, args):
    from ..adaptation import run_strategy

    base = _base(cfg)
    ft = cfg.finetune()
    ckpt_dir = cfg.output() / "checkpoints"
    corpus = base.train_records(ft.corpus_views)
    steps = [int(x) for x in cfg.section("train").get("checkpoint_steps") or []]
    extra = {"checkpoint_steps": steps} if steps else {}
    record, _ = run_strategy(ft, corpus, base.pipeline.copy(), checkpoint_dir=ckpt_dir, **extra)
    (ckpt_dir / f"{ft.name}-run.json").write_text(json.dumps(record.metadata(), indent=2, sort_keys=True))
    losses = np.asarray(record.losses)
    summary = f"first100={losses[:100].mean():.4f} last100={losses[-100:].mean():.4f}" if len(losses) else "no steps"
    print(f"trained {ft.name}: {len(losses)} steps, {summary}")
    print(f"checkpoint {record.checkpoint}")
    print(f"unet hash {record.hashes_after['unet']}")


def cmd_sample(cfg, args):
    from ..data import build_corpus
    from ..data.manifest import save_png
    from ..diffusion import generate_many
    from .desk import prompt_seeds

    pipe, path = _checkpoint(cfg, "sample")
    sec = cfg.section("sample")
    prompts = sec.get("prompts")
    if not prompts:
        spec = cfg.desk().corpus
        prompts = [r.impression for r in build_corpus(spec).test[:int(sec.get("n", 16))]]
    sampler = cfg.desk().sampler
    images = generate_many(prompts, pipe, sampler, prompt_seeds(len(prompts), cfg.seed))
    out = cfg.output() / "samples"
    out.mkdir(parents=True, exist_ok=True)
    for i, im in enumerate(images):
        save_png(im, out / f"{i:04d}.png")
    np.save(out / "images.npy", images)
    digest = hashlib.sha256(np.ascontiguousarray(images).tobytes()).hexdigest()
    print(f"{len(images)} images from {path} -> {out}")
    print(f"images sha256 {digest}")


def cmd_eval_fid(cfg, args):
    from ..metrics.fidelity import FeatureSet, extract_features, fit_gaussian, frechet_distance
    from ..metrics.report import EvalReport
    from .desk import generate_for_records

    sec = cfg.section("eval")
    if sec.get("a") and sec.get("b"):
        fa, fb = (FeatureSet.load(_resolve(cfg, sec[k])) for k in ("a", "b"))
        print(frechet_distance(fit_gaussian(fa), fit_gaussian(fb)))
        return
    base = _base(cfg)
    pipe, _ = _checkpoint(cfg, "eval")
    records = base.eval_records()
    fake = generate_for_records(pipe, records, base.config.sampler, cfg.seed)
    real = np.stack([r.image for r in records])
    values = {}
    for name, ext in base.extractors().items():
        fr, ff = extract_features(real, ext), extract_features(fake, ext)
        fr.save(_reports_dir(cfg) / f"features.real.{name}.bin")
        ff.save(_reports_dir(cfg) / f"features.generated.{name}.bin")
        values[f"fid.{name}"] = frechet_distance(fit_gaussian(fr), fit_gaussian(ff))
        print(f"fid.{name} {values[f'fid.{name}']:.4f}")
    EvalReport("fid", values, cfg.finetune().fingerprint(), base.corpus_fingerprint).write(_reports_dir(cfg), "fid")


def cmd_eval_msssim(cfg, args):
    from ..metrics.msssim import diversity_by_token_length
    from ..metrics.report import EvalReport
    from .desk import diversity_samples

    base = _base(cfg)
    pipe, _ = _checkpoint(cfg, "eval")
    n = int(cfg.section("eval").get("n_prompts", base.config.diversity_prompts))
    groups = diversity_samples(pipe, base.eval_records()[:n], base.config.sampler,
                               base.config.samples_per_prompt, cfg.seed)
    rows = diversity_by_token_length(groups)
    means = [g[1] for g in groups]
    report = EvalReport("msssim", {"msssim.mean": float(np.mean(means)), "msssim.std": float(np.std(means))},
                        cfg.finetune().fingerprint(), base.corpus_fingerprint, tables={"diversity_bins": rows})
    report.write(_reports_dir(cfg), "msssim")
    print(f"msssim mean {np.mean(means):.4f} over {len(means)} prompts")


def cmd_eval_classify(cfg, args):
    from ..data.grammar import TOY_CLASSES
    from ..metrics.classification import classify_generated
    from ..metrics.oracle import toy_label_matrix
    from .desk import prompt_seeds

    base = _base(cfg)
    pipe, _ = _checkpoint(cfg, "eval")
    records = base.eval_records()
    report = classify_generated(pipe, [r.impression for r in records], toy_label_matrix(records), base.classifier,
                                base.config.sampler, list(TOY_CLASSES), prompt_seeds(len(records), cfg.seed),
                                config_fingerprint=cfg.finetune().fingerprint(),
                                corpus_fingerprint=base.corpus_fingerprint)
    report.values["auroc.real_upper_bound"] = base.info.get("real_test_auroc", float("nan"))
    if not np.isfinite(report.values["auroc.real_upper_bound"]):
        del report.values["auroc.real_upper_bound"]
    report.write(_reports_dir(cfg), "classify")
    print(f"macro AUROC {report.values.get('auroc.macro', float('nan')):.4f} ({len(records)} prompts)")


def cmd_eval_retrieval(cfg, args):
    from ..metrics.report import EvalReport
    from ..metrics.retrieval import (DEFAULT_KS, RetrievalPool, ToyImageTextEmbedder, image_text_retrieve,
                                     retrieval_precision_at_k, sample_pool_indices, single_label)
    from ..metrics.text import text_metric_suite
    from .desk import generate_for_records

    base = _base(cfg)
    pipe, _ = _checkpoint(cfg, "eval")
    sec = cfg.section("eval")
    test = base.splits.test
    idx, names = single_label(test)
    n_q = min(int(sec.get("n_query", 200)), len(idx) // 3)
    n_c = min(int(sec.get("n_candidates", 400)), len(idx) - n_q)
    qi, ci = sample_pool_indices(len(idx), n_q, n_c, cfg.seed)
    queries = [test[idx[i]] for i in qi]
    cands = [test[idx[i]] for i in ci]
    fake = generate_for_records(pipe, queries, base.config.sampler, cfg.seed)
    feats = base.extractors()["oracle"]
    pool = RetrievalPool(feats(fake), np.array([names[i] for i in qi]),
                         feats(np.stack([r.image for r in cands])), np.array([names[i] for i in ci]))
    ks = [k for k in DEFAULT_KS if k <= n_c]
    prec = retrieval_precision_at_k(pool, ks)
    values = {f"image_image.p@{k}": v for k, v in prec.items()}
    emb = ToyImageTextEmbedder(base.classifier)
    texts = [r.impression for r in cands]
    text_emb = emb.texts(texts)
    img_emb = emb.images(fake)
    top1 = [image_text_retrieve(q, text_emb, texts, top=1)[0][0] for q in img_emb]
    text_pool = RetrievalPool(img_emb, pool.query_labels, text_emb, pool.candidate_labels)
    values.update({f"image_text.p@{k}": v for k, v in retrieval_precision_at_k(text_pool, ks).items()})
    values.update({f"image_text.{k}": v for k, v in text_metric_suite(top1, [r.impression for r in queries]).items()})
    EvalReport("retrieval", values, cfg.finetune().fingerprint(), base.corpus_fingerprint,
               metadata={"n_query": n_q, "n_candidates": n_c}).write(_reports_dir(cfg), "retrieval")
    for k, v in sorted(values.items()):
        print(f"{k} {v:.4f}")


def cmd_eval_text(cfg, args):
    from ..data.grammar import TOY_CLASSES
    from ..metrics.report import EvalReport
    from ..metrics.text import text_metric_suite, toy_captioner
    from .desk import generate_for_records

    base = _base(cfg)
    pipe, _ = _checkpoint(cfg, "eval")
    records = base.eval_records()
    fake = generate_for_records(pipe, records, base.config.sampler, cfg.seed)
    refs = [r.impression for r in records]
    gen = [toy_captioner(p, TOY_CLASSES) for p in base.classifier.predict_proba(fake)]
    upper = [toy_captioner(p, TOY_CLASSES) for p in base.classifier.predict_proba(np.stack([r.image for r in records]))]
    values = {f"generated.{k}": v for k, v in text_metric_suite(gen, refs).items()}
    values.update({f"real_images.{k}": v for k, v in text_metric_suite(upper, refs).items()})
    EvalReport("text_metrics", values, cfg.finetune().fingerprint(), base.corpus_fingerprint,
               metadata={"bleu_smoothing": "add-epsilon 1e-9", "radgraph": "not computed (no relation extractor)"}
               ).write(_reports_dir(cfg), "text_metrics")
    for k, v in sorted(values.items()):
        print(f"{k} {v:.4f}")


def cmd_eval_chexpert10(cfg, args):
    from ..data.grammar import TOY_CLASSES
    from ..metrics.oracle import toy_label_matrix
    from ..metrics.probe import chexpert_at_10, text_embeddings
    from ..metrics.report import EvalReport

    base = _base(cfg)
    pipe, _ = _checkpoint(cfg, "eval")
    records = base.splits.test
    truth = toy_label_matrix(records)
    rows, values = [], {}
    for tag, p in (("base", base.pipeline), ("checkpoint", pipe)):
        per_class, macro = chexpert_at_10(text_embeddings(p, [r.impression for r in records]), truth, TOY_CLASSES)
        rows.append({"model": tag, **per_class, "macro": macro})
        values[f"{tag}.macro"] = macro
    EvalReport("chexpert10", values, cfg.finetune().fingerprint(), base.corpus_fingerprint,
               tables={"per_class": rows}).write(_reports_dir(cfg), "chexpert10")
    for r in rows:
        print(f"{r['model']}: macro {r['macro']:.2f}")


def cmd_augment(cfg, args):
    from .augmentation import AugmentationPlan, AugmentationSplit, run_augmentation_study

    base = _base(cfg)
    sec = cfg.section("augmentation")
    default_ckpt = cfg.output() / "checkpoints" / f"{cfg.finetune().name}-final.ckpt"
    specs = sec.get("splits") or [{"real": 800}, {"real": 0, "synth": 800}, {"real": 800, "synth": 800}]
    splits = []
    for s in specs:
        ckpt = s.get("checkpoint")
        if ckpt is not None:
            ckpt = _resolve(cfg, ckpt)
        if ckpt is None and s.get("synth", 0):
            ckpt = default_ckpt
        splits.append(AugmentationSplit(int(s.get("real", 0)), int(s.get("synth", 0)),
                                        str(ckpt) if ckpt is not None else None, s.get("label", "")))
    plan = AugmentationPlan(splits, base.config.classifier, int(sec.get("baseline_index", 0)),
                            float(sec.get("validation_fraction", 0.2)), base.config.sampler, cfg.seed)
    report = run_augmentation_study(plan, base.splits.train, base.splits.test,
                                    config_fingerprint=cfg.finetune().fingerprint())
    report.write(_reports_dir(cfg), "augmentation")


def cmd_probe(cfg, args):
    from ..data import general_corpus_generate
    from ..metrics.probe import forgetting_probe, forgetting_table
    from ..metrics.report import EvalReport

    base = _base(cfg)
    sec = cfg.section("probe")
    paths = [_resolve(cfg, p) for p in sec.get("checkpoints") or []]
    for p in paths:
        if not p.exists():
            raise ConfigError(f"checkpoint not found: {p}", key="probe.checkpoints")
    if len(paths) < 2:
        raise ConfigError("probe.checkpoints needs at least two entries", key="probe.checkpoints")
    general = general_corpus_generate(int(sec.get("general_n", 400)), seed=cfg.seed + 202,
                                      size=base.config.model.image_size)
    reports = forgetting_probe([str(p) for p in paths], base.splits.test, general, steps=sec.get("steps"),
                               corpus_fingerprint=base.corpus_fingerprint)
    rows = forgetting_table(reports)
    EvalReport("forgetting_probe", {}, cfg.finetune().fingerprint(), base.corpus_fingerprint,
               tables={"forgetting": rows}).write(_reports_dir(cfg), "forgetting")
    for r in rows:
        print(f"step {r['step']}: in-domain {r['in_domain_macro']:.2f} general {r['general_macro']:.2f}")


def cmd_grid(cfg, args):
    from .desk import grid_report, resolve_presets, run_finetune_grid

    sec = cfg.section("grid")
    configs = resolve_presets(sec.get("presets") or ["original", "lr5e-5_1k"])
    overrides = dict(sec.get("overrides") or {})
    configs = [c.replace(seed=cfg.seed, **overrides) for c in configs]
    base = _base(cfg)
    rows = run_finetune_grid(configs, base, cfg.output(), cfg.seed)
    grid_report(rows, base).write(_reports_dir(cfg), "finetune_grid")


def cmd_report(cfg, args):
    from .render import render_directory

    sec = cfg.section("report")
    inp = _resolve(cfg, sec["input_dir"]) if sec.get("input_dir") else cfg.output() / "reports"
    if not Path(inp).is_dir():
        raise ConfigError(f"report input directory not found: {inp}", key="report.input_dir")
    out = render_directory(inp, cfg.output(), plots=bool(sec.get("plots", True)),
                           title=sec.get("title", "Results"))
    print(out)


EVAL_COMMANDS = {"fid": cmd_eval_fid, "msssim": cmd_eval_msssim, "classify": cmd_eval_classify,
                 "retrieval": cmd_eval_retrieval, "text-metrics": cmd_eval_text, "chexpert10": cmd_eval_chexpert10}


def _common(p):
    p.add_argument("--config", required=True, help="YAML experiment configuration")
    p.add_argument("--seed", type=int, default=None, help="override the configuration seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="ldmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    corpus = sub.add_parser("corpus", help="synthetic corpus operations")
    corpus_sub = corpus.add_subparsers(dest="action", required=True)
    _common(corpus_sub.add_parser("build", help="generate, filter, split and write the corpus"))
    for name, help_text in (("train", "fine-tune the base model with one preset"),
                            ("sample", "generate images from a checkpoint"),
                            ("augment-study", "real/synthetic classifier training study"),
                            ("probe-forgetting", "CheXpert@10 series across checkpoints"),
                            ("grid", "fine-tuning strategy grid")):
        _common(sub.add_parser(name, help=help_text))
    ev = sub.add_parser("eval", help="evaluation suite")
    ev_sub = ev.add_subparsers(dest="metric", required=True)
    for name in EVAL_COMMANDS:
        _common(ev_sub.add_parser(name))
    report = sub.add_parser("report", help="report rendering")
    report_sub = report.add_subparsers(dest="action", required=True)
    _common(report_sub.add_parser("render", help="EvalReports -> markdown and plots"))
    return parser


def dispatch(args):
    if args.command == "corpus":
        return cmd_corpus_build
    if args.command == "eval":
        return EVAL_COMMANDS[args.metric]
    if args.command == "report":
        return cmd_report
    return {"train": cmd_train, "sample": cmd_sample, "augment-study": cmd_augment,
            "probe-forgetting": cmd_probe, "grid": cmd_grid}[args.command]


def main(argv=None) -> int:
    from .config import load_config

    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        dispatch(args)(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
