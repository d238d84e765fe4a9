"""Score tables (one row of class scores per sample) and their file format.

A score file is text: a header line

    #vidfuse-scores v1 {"kind": ..., "num_samples": N, "num_classes": C, "class_hash": ...}

followed by one line per sample, ``id<TAB>score score ...``. ``kind`` is
"probabilities" for post-softmax rows or "logits" for raw scores; consumers
that average scores refuse logits. Floats are written with shortest
round-trip repr so save/load is value-exact and byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

HEADER_PREFIX = "#vidfuse-scores v1 "


@dataclass
class ScoreMatrix:
    ids: list[str]
    scores: np.ndarray  # N x C
    kind: str = "probabilities"  # probabilities | logits
    class_hash: str = ""

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ShapeError(f"scores must be 2-D, got shape {self.scores.shape}")
        if len(self.ids) != self.scores.shape[0]:
            raise ShapeError(
                f"{len(self.ids)} ids for {self.scores.shape[0]} score rows")
        if self.kind not in ("probabilities", "logits"):
            raise DataError(f"unknown score kind {self.kind!r}")
        if not np.all(np.isfinite(self.scores)):
            raise DataError("score matrix contains non-finite values")

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def __len__(self) -> int:
        return self.scores.shape[0]


def save_scores(sm: ScoreMatrix, path: str) -> None:
    header = {
        "kind": sm.kind,
        "num_samples": len(sm),
        "num_classes": sm.num_classes,
        "class_hash": sm.class_hash,
    }
    with open(path, "w") as f:
        f.write(HEADER_PREFIX + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for rid, row in zip(sm.ids, sm.scores):
            f.write(rid + "\t" + " ".join(repr(float(x)) for x in row) + "\n")


def load_scores(path: str) -> ScoreMatrix:
    with open(path) as f:
        lines = f.readlines()
    if not lines or not lines[0].startswith(HEADER_PREFIX):
        raise DataError(f"{path!r} is not a score file (missing header)")
    try:
        header = json.loads(lines[0][len(HEADER_PREFIX):])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path!r}: malformed score header ({exc.msg})") from exc

    ids: list[str] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise DataError(f"{path!r} line {lineno}: expected 'id<TAB>scores'")
        try:
            row = [float(x) for x in parts[1].split()]
        except ValueError as exc:
            raise DataError(f"{path!r} line {lineno}: bad score value ({exc})") from exc
        ids.append(parts[0])
        rows.append(row)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise DataError(f"{path!r}: rows have inconsistent class counts {sorted(widths)}")
    sm = ScoreMatrix(
        ids=ids,
        scores=np.array(rows) if rows else np.zeros((0, int(header.get("num_classes", 0)))),
        kind=str(header.get("kind", "probabilities")),
        class_hash=str(header.get("class_hash", "")),
    )
    if header.get("num_samples") != len(sm) or (rows and header.get("num_classes") != sm.num_classes):
        raise DataError(f"{path!r}: header sample/class counts disagree with body")
    return sm
