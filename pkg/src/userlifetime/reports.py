"""Report artifacts: run manifests, JSON/Markdown/CSV emission.

Every JSON report is {"manifest": ..., "report": ...}; the manifest's
created_at field is the only part of a report body allowed to differ
between identically-seeded runs.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: list[str]
    seed: int | None
    input_hashes: dict[str, str] = field(default_factory=dict)
    catalog_version: str = ""
    tool_version: str = __version__
    created_at: str = ""

    @classmethod
    def collect(cls, seed, inputs=(), catalog_version="", argv=None) -> "RunManifest":
        return cls(
            command=list(sys.argv if argv is None else argv),
            seed=seed,
            input_hashes={str(p): file_sha256(p) for p in inputs},
            catalog_version=catalog_version,
            created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        )


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json_report(path, report: dict, manifest: RunManifest) -> None:
    doc = {"manifest": asdict(manifest), "report": _jsonable(report)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def strip_timestamps(doc: dict) -> dict:
    """Report body with the volatile timestamp removed, for hash comparisons."""
    doc = json.loads(json.dumps(doc))
    doc.get("manifest", {}).pop("created_at", None)
    return doc


def markdown_table(headers: list[str], rows: list[list]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(fmt(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def write_markdown_report(path, title: str, sections: list[tuple[str, str]],
                          manifest: RunManifest) -> None:
    parts = [f"# {title}", ""]
    parts.append(
        f"seed: {manifest.seed} | catalog: {manifest.catalog_version or 'n/a'} "
        f"| tool: {manifest.tool_version}"
    )
    parts.append("")
    for heading, body in sections:
        parts.append(f"## {heading}")
        parts.append("")
        parts.append(body)
        parts.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def score_rows(named_summaries) -> list[list]:
    return [
        [name, s.mean, s.stddev, " ".join(f"{v:.4f}" for v in s.per_fold)]
        for name, s in named_summaries
    ]


def write_matrix_report_csv(path, names: list[str], matrix: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("model\\data," + ",".join(names) + "\n")
        for name, row in zip(names, matrix):
            fh.write(name + "," + ",".join(f"{v:.6f}" for v in row) + "\n")


def write_bands_csv(path, bands: dict) -> None:
    with open(path, "w") as fh:
        fh.write("feature,bucket,count,low_confidence,constant,"
                 + ",".join(f"q{d}" for d in range(10, 100, 10)) + "\n")
        for name, band in bands.items():
            for bucket in band.buckets:
                q = band.quantiles[bucket]
                qs = ",".join("" if np.isnan(v) else f"{v:.6f}" for v in q)
                fh.write(
                    f"{name},{bucket},{band.counts[bucket]},"
                    f"{int(bucket in band.low_confidence)},{int(band.constant)},{qs}\n"
                )
