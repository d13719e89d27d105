"""EvalReport: flat key=value record plus named CSV tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InvalidArgumentError


@dataclass
class EvalReport:
    task: str
    values: dict = field(default_factory=dict)
    config_fingerprint: str = "none"
    corpus_fingerprint: str = "none"
    tables: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for k, v in self.values.items():
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidArgumentError(f"metric {k!r} is not a finite number: {v!r}")
        if not self.config_fingerprint or not self.corpus_fingerprint:
            raise InvalidArgumentError("fingerprints must be present")
        return self

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self) -> str:
        lines = [f"task={self.task}", f"config_fingerprint={self.config_fingerprint}",
                 f"corpus_fingerprint={self.corpus_fingerprint}"]
        lines += [f"{k}={float(v)!r}" for k, v in sorted(self.values.items())]
        lines += [f"flag={f}" for f in self.flags]
        lines += [f"meta.{k}={v}" for k, v in sorted(self.metadata.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, tables=None):
        head, values, flags, meta = {}, {}, [], {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key in ("task", "config_fingerprint", "corpus_fingerprint"):
                head[key] = value
            elif key == "flag":
                flags.append(value)
            elif key.startswith("meta."):
                meta[key[5:]] = value
            else:
                values[key] = float(value)
        return cls(head.get("task", ""), values, head.get("config_fingerprint", "none"),
                   head.get("corpus_fingerprint", "none"), tables or {}, flags, meta)

    def write(self, directory, stem=None) -> list:
        """``{stem}.txt`` plus one CSV per table; every CSV row carries both
        fingerprints (the report's own unless the row sets them)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.task
        written = [directory / f"{stem}.txt"]
        written[0].write_text(self.to_text())
        stamp = {"config_fingerprint": self.config_fingerprint, "corpus_fingerprint": self.corpus_fingerprint}
        for name, rows in sorted(self.tables.items()):
            path = directory / f"{stem}.{name}.csv"
            write_table(path, [{**r, **{k: v for k, v in stamp.items() if k not in r}} for r in rows])
            written.append(path)
        return written

    @classmethod
    def read(cls, path):
        path = Path(path)
        tables = {}
        for csv_path in sorted(path.parent.glob(f"{path.stem}.*.csv")):
            tables[csv_path.name[len(path.stem) + 1:-4]] = read_table(csv_path)
        return cls.from_text(path.read_text(), tables)


def write_table(path, rows):
    rows = list(rows)
    columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return Path(path)


def _parse(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_table(path):
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]
