"""Fine-tune the general-domain base model on the toy chest-film corpus and
compare it with the model it started from.

The desk run (default) takes a few minutes on one CPU; ``--tiny`` shrinks
everything to a seconds-scale smoke run.

    python3 demos/03_finetune_and_evaluate.py [--tiny] [--preset lr5e-5_60k]
"""
import argparse
import time
from pathlib import Path

from ldmlab.adaptation import run_strategy, strategy_presets
from ldmlab.experiments import DeskConfig, evaluate_pipeline, load_config, prepare_base

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tiny", action="store_true", help="use configs/tiny.yaml scales")
    ap.add_argument("--preset", default="lr5e-5_60k", choices=sorted(strategy_presets()))
    ap.add_argument("--cache", default=str(ROOT / "runs" / "cache"))
    args = ap.parse_args()

    config = load_config(ROOT / "configs" / "tiny.yaml").desk() if args.tiny else DeskConfig()
    t0 = time.perf_counter()
    base = prepare_base(config, cache_dir=args.cache)
    print(f"base ready in {time.perf_counter() - t0:.0f}s; oracle classifier on real test images: "
          f"macro AUROC {base.info.get('real_test_auroc', float('nan')):.3f}")

    preset = strategy_presets()[args.preset]
    if args.tiny:
        preset = preset.replace(train_steps=min(preset.train_steps, 100), batch_size=8)
    print(f"\nfine-tuning '{preset.name}': {preset.train_steps} steps at lr {preset.learning_rate}, "
          f"U-Net {preset.unet_mode}, text encoder {preset.text_encoder_mode}")
    t0 = time.perf_counter()
    record, tuned = run_strategy(preset, base.train_records(preset.corpus_views), base.pipeline.copy())
    n = max(1, len(record.losses) // 10)
    if record.losses:
        print(f"loss {sum(record.losses[:n]) / n:.3f} -> {sum(record.losses[-n:]) / n:.3f} "
              f"({time.perf_counter() - t0:.0f}s); trained {len(record.trainable)} tensors")

    print(f"\n{'model':12s}{'FID oracle':>12s}{'FID randproj':>14s}{'MS-SSIM':>10s}{'AUROC':>8s}")
    for name, pipe in (("original", base.pipeline), ("fine-tuned", tuned)):
        row = evaluate_pipeline(pipe, base, name, config.seed)
        print(f"{name:12s}{row['fid.oracle']:12.4g}{row['fid.randproj']:14.4f}"
              f"{row['msssim.mean']:10.3f}{row['auroc.macro']:8.3f}")
        per_class = ", ".join(f"{k[6:]} {v:.2f}" for k, v in row.items()
                              if k.startswith("auroc.") and k != "auroc.macro")
        print(f"{'':12s}{per_class}")


if __name__ == "__main__":
    main()
