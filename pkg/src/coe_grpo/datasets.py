"""Line-delimited JSON dataset files.

Each line is one instance: seed, label, stratum, planted artifacts, the eight
detector scores, the nine view summaries and the gold trace. Grids are not
stored; loading regenerates every instance from (seed, truth) and checks the
stored evidence against the regenerated one.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import (
    Artifact, ArtifactKind, GroundTruth, ForensicInstance, build_instance,
    view_summaries,
)
from .vocab import token_names

DATASET_SCHEMA = "coe-grpo-dataset/1"


class DataError(ValueError):
    """Malformed, inconsistent or missing dataset file."""


def instance_record(inst: ForensicInstance) -> dict:
    return {
        "schema_version": DATASET_SCHEMA,
        "seed": int(inst.seed),
        "label": inst.label,
        "stratum": inst.stratum,
        "artifacts": [
            {"kind": a.kind.name, "strength": a.strength, "region": a.region}
            for a in inst.truth.artifacts
        ],
        "scores": [float(r.score) for r in inst.reports],
        "view_summaries": [float(v) for v in view_summaries(inst.views)],
        "gold_trace": token_names(inst.gold_trace),
    }


def _truth(rec: dict) -> GroundTruth:
    arts = tuple(
        Artifact(ArtifactKind[a["kind"]], float(a["strength"]), int(a["region"]))
        for a in rec["artifacts"]
    )
    return GroundTruth(rec["label"], arts)


def instance_from_record(rec: dict) -> ForensicInstance:
    if rec.get("schema_version") != DATASET_SCHEMA:
        raise DataError(f"schema_version {rec.get('schema_version')!r}, expected {DATASET_SCHEMA!r}")
    try:
        inst = build_instance(int(rec["seed"]), _truth(rec), rec.get("stratum"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad record: {exc}") from None
    if instance_record(inst) != rec:
        raise DataError("stored evidence does not match the regenerated instance")
    return inst


def write_dataset(instances: Sequence[ForensicInstance], path) -> None:
    lines = [json.dumps(instance_record(i), sort_keys=True) for i in instances]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_dataset(path) -> list[ForensicInstance]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: not JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DataError(f"{path}:{lineno}: record must be an object")
        try:
            out.append(instance_from_record(rec))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise DataError(f"{path}: dataset is empty")
    return out


def summarize(instances: Sequence[ForensicInstance]) -> dict:
    labels = Counter(i.label for i in instances)
    strata = Counter(i.stratum for i in instances if i.label == "FAKE")
    return {
        "n": len(instances),
        "labels": {k: labels.get(k, 0) for k in ("REAL", "FAKE")},
        "strata": {name: strata.get(s, 0) for s, name in enumerate(("high", "medium", "low"))},
        "mean_scores": np.mean([[r.score for r in i.reports] for i in instances], axis=0).round(6).tolist(),
    }
