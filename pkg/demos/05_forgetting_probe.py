"""Track how the text encoder's report clustering (CheXpert@10) moves while
fine-tuning, in-domain and on general-domain captions, then render the
series as markdown plus a plot.

    python3 demos/05_forgetting_probe.py [--tiny] --out runs/demo_probe
"""
import argparse
from pathlib import Path

from ldmlab.adaptation import strategy_presets, train
from ldmlab.data import general_corpus_generate
from ldmlab.experiments import DeskConfig, load_config, prepare_base, render_directory
from ldmlab.metrics import EvalReport, forgetting_probe
from ldmlab.metrics.probe import forgetting_table

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tiny", action="store_true")
    ap.add_argument("--cache", default=str(ROOT / "runs" / "cache"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "demo_probe"))
    args = ap.parse_args()

    config = load_config(ROOT / "configs" / "tiny.yaml").desk() if args.tiny else DeskConfig()
    base = prepare_base(config, cache_dir=args.cache)
    preset = strategy_presets()["lr5e-5_60k"]
    if args.tiny:
        preset = preset.replace(train_steps=60, batch_size=8)
    total = preset.train_steps
    steps = sorted({0, total // 10, total // 2, total})

    pipe = base.pipeline.copy()
    record = train(preset, base.splits.train, pipe, checkpoint_steps=steps, keep_checkpoints_in_memory=True)
    print(f"trained {total} steps, snapshots at {sorted(record.checkpoints)}")

    general = general_corpus_generate(400, seed=202, size=config.model.image_size)
    reports = forgetting_probe(record.checkpoints, base.splits.test, general)
    rows = forgetting_table(reports)
    print(f"\n{'step':>6s}{'in-domain':>12s}{'general':>10s}")
    for r in rows:
        print(f"{r['step']:6d}{r['in_domain_macro']:12.1f}{r['general_macro']:10.1f}")

    out = Path(args.out)
    EvalReport("forgetting_probe", {}, preset.fingerprint(), base.corpus_fingerprint,
               tables={"forgetting": rows}).write(out / "reports", "forgetting")
    record.export_loss_csv(out / "reports" / f"{preset.name}-loss.csv")
    print(f"\nrendered {render_directory(out / 'reports', out, title='Forgetting probe')}")


if __name__ == "__main__":
    main()
