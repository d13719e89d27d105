"""Line-delimited corpus manifest with 8-bit grayscale PNG images."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .records import ReportRecord

MANIFEST_SCHEMA = "ldmlab.corpus-manifest"
MANIFEST_VERSION = 1
RECORD_FIELDS = ("record_id", "image_path", "impression", "view", "labels", "split", "subgroup")


def save_png(image: np.ndarray, path):
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def write_manifest(records, directory, name="manifest.jsonl") -> Path:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    path = directory / name
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION}) + "\n")
        for r in records:
            rel = f"images/{r.record_id}.png"
            if r.image is not None:
                save_png(r.image, directory / rel)
            row = {
                "record_id": r.record_id,
                "image_path": rel if r.image is not None else r.image_path,
                "impression": r.impression,
                "view": r.view,
                "labels": [int(v) for v in r.labels],
                "split": r.split,
                "subgroup": r.subgroup,
            }
            fh.write(json.dumps(row) + "\n")
    return path


def read_manifest(path, load_images=True) -> list[ReportRecord]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != MANIFEST_SCHEMA:
            raise ValueError(f"{path} is not a corpus manifest")
        if header.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {header.get('version')}")
        records = []
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            image = None
            if load_images and row.get("image_path"):
                image = load_png(path.parent / row["image_path"])
            records.append(ReportRecord(
                record_id=row["record_id"],
                impression=row["impression"],
                view=row["view"],
                labels=np.asarray(row["labels"], dtype=np.int8),
                split=row["split"],
                subgroup=row.get("subgroup", "p10"),
                image=image,
                image_path=row.get("image_path"),
            ))
    return records
