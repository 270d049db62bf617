"""Report serialization: deterministic key-value text, markdown, CSV.

The text format is the canonical artifact. Every value is derived from
config and seeds, so two runs of the same experiment produce byte-identical
files except for lines under the `timing.` prefix, which comparisons strip.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import DataError
from .harness import (
    CompressionStats,
    CriteriaResult,
    ExperimentReport,
    SweepPoint,
    TargetResult,
)

REPORT_HEADER = "caae-report v1"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # shortest exact round-trip representation
    return str(value)


def _fmt_list(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def report_to_text(report: ExperimentReport, config_digest: str | None = None) -> str:
    lines = [REPORT_HEADER]
    put = lines.append
    put(f"meta.variant = {report.variant_label}")
    put(f"meta.variant_kind = {report.variant_kind}")
    put(f"meta.master_seed = {report.master_seed}")
    if config_digest:
        put(f"meta.config_digest = {config_digest}")
    put(f"data.n_windows = {report.n_windows}")
    put(f"data.n_users = {report.n_users}")
    put(f"data.n_activities = {report.n_activities}")
    put(f"eval.scheme = {report.scheme}")
    put(f"eval.folds = {report.folds}")
    put(f"eval.estimator = {report.estimator_kind}")
    put(f"eval.input_kind = {report.input_kind}")
    for name, target in (("activity", report.activity), ("user", report.user)):
        put(f"{name}.fold_f1 = {_fmt_list(target.fold_f1)}")
        put(f"{name}.mean_f1 = {_fmt(target.mean_f1)}")
        put(f"{name}.sd_f1 = {_fmt(target.sd_f1)}")
        put(f"{name}.fold_accuracy = {_fmt_list(target.fold_accuracy)}")
        put(f"{name}.mean_accuracy = {_fmt(target.mean_accuracy)}")
    if report.compression is not None:
        c = report.compression
        put(f"compression.payload_ratio = {_fmt(c.payload_ratio)}")
        put(f"compression.total_ratio = {_fmt(c.total_ratio)}")
        put(f"compression.payload_bytes = {c.payload_bytes}")
        put(f"compression.header_bytes = {c.header_bytes}")
        put(f"compression.header_overhead = {_fmt(c.header_overhead)}")
        put(f"compression.frames = {c.frames}")
    if report.criteria is not None:
        r = report.criteria
        put(f"criteria.baseline_activity_f1 = {_fmt(r.baseline_activity_f1)}")
        put(f"criteria.req1 = {'pass' if r.req1_pass else 'fail'}")
        put(f"criteria.req1_margin = {_fmt(r.req1_margin)}")
        put(f"criteria.req2 = {'pass' if r.req2_pass else 'fail'}")
        put(f"criteria.req2_margin = {_fmt(r.req2_margin)}")
        put(f"criteria.req2_threshold = {_fmt(r.req2_threshold)}")
        put(f"criteria.req2_accuracy = {'pass' if r.req2_accuracy_pass else 'fail'}")
        put(f"criteria.verdicts_disagree = {_fmt(r.verdicts_disagree)}")
    put(f"timing.wall_seconds = {_fmt(report.wall_seconds)}")
    return "\n".join(lines) + "\n"


def parse_report_text(text: str) -> dict:
    """Key-value dict of a report file; values stay strings."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise DataError(f"not a report file (expected header {REPORT_HEADER!r})")
    out = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if " = " not in line:
            raise DataError(f"report line {i} is not 'key = value': {line!r}")
        key, value = line.split(" = ", 1)
        out[key.strip()] = value.strip()
    return out


def report_from_text(text: str) -> ExperimentReport:
    kv = parse_report_text(text)

    def floats(key):
        return [float(v) for v in kv[key].split(",")]

    def target(name):
        return TargetResult(fold_f1=floats(f"{name}.fold_f1"), fold_accuracy=floats(f"{name}.fold_accuracy"))

    compression = None
    if "compression.payload_ratio" in kv:
        compression = CompressionStats(
            payload_ratio=float(kv["compression.payload_ratio"]),
            total_ratio=float(kv["compression.total_ratio"]),
            payload_bytes=int(kv["compression.payload_bytes"]),
            header_bytes=int(kv["compression.header_bytes"]),
            header_overhead=float(kv["compression.header_overhead"]),
            frames=int(kv["compression.frames"]),
        )
    criteria = None
    if "criteria.req1" in kv:
        criteria = CriteriaResult(
            baseline_activity_f1=float(kv["criteria.baseline_activity_f1"]),
            req1_pass=kv["criteria.req1"] == "pass",
            req1_margin=float(kv["criteria.req1_margin"]),
            req2_pass=kv["criteria.req2"] == "pass",
            req2_margin=float(kv["criteria.req2_margin"]),
            req2_threshold=float(kv["criteria.req2_threshold"]),
            req2_accuracy_pass=kv["criteria.req2_accuracy"] == "pass",
            verdicts_disagree=kv["criteria.verdicts_disagree"] == "true",
        )
    return ExperimentReport(
        variant_kind=kv["meta.variant_kind"],
        variant_label=kv["meta.variant"],
        master_seed=int(kv["meta.master_seed"]),
        n_windows=int(kv["data.n_windows"]),
        n_users=int(kv["data.n_users"]),
        n_activities=int(kv["data.n_activities"]),
        scheme=kv["eval.scheme"],
        folds=int(kv["eval.folds"]),
        estimator_kind=kv["eval.estimator"],
        input_kind=kv["eval.input_kind"],
        activity=target("activity"),
        user=target("user"),
        compression=compression,
        criteria=criteria,
        wall_seconds=float(kv["timing.wall_seconds"]),
    )


def strip_timing(text: str) -> str:
    """Report text without the volatile timing lines (for digests)."""
    return "\n".join(l for l in text.splitlines() if not l.startswith("timing.")) + "\n"


def report_digest(text: str) -> str:
    return hashlib.sha256(strip_timing(text).encode()).hexdigest()


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def summary_markdown(reports: dict[str, ExperimentReport]) -> str:
    """Comparison table, variants as columns (baseline first if present)."""
    order = sorted(reports, key=lambda k: (k != "baseline", k))
    lines = ["# Experiment summary", ""]
    header = "| Target | Metric | " + " | ".join(order) + " |"
    sep = "|---" * (len(order) + 2) + "|"
    lines.extend([header, sep])
    for target in ("activity", "user"):
        f1_cells = [f"{getattr(reports[k], target).mean_f1:.4f}" for k in order]
        sd_cells = [f"{getattr(reports[k], target).sd_f1:.4f}" for k in order]
        lines.append(f"| {target} | mean F1 | " + " | ".join(f1_cells) + " |")
        lines.append(f"| {target} | SD | " + " | ".join(sd_cells) + " |")
    comp = [k for k in order if reports[k].compression is not None]
    if comp:
        lines.append("")
        for k in comp:
            c = reports[k].compression
            lines.append(
                f"- `{k}`: payload ratio {c.payload_ratio:g}x, with headers "
                f"{c.total_ratio:.2f}x, header overhead {100 * c.header_overhead:.2f}%"
            )
    crit = [k for k in order if reports[k].criteria is not None]
    if crit:
        lines.append("")
        lines.append("| Variant | Req1 (utility) | Req2 (anonymity) | Req2 threshold |")
        lines.append("|---|---|---|---|")
        for k in crit:
            r = reports[k].criteria
            lines.append(
                f"| {k} | {'pass' if r.req1_pass else 'fail'} ({r.req1_margin:+.4f}) "
                f"| {'pass' if r.req2_pass else 'fail'} ({r.req2_margin:+.4f}) "
                f"| {r.req2_threshold:.4f} |"
            )
    return "\n".join(lines) + "\n"


def tradeoff_csv(axis: str, points: list[SweepPoint]) -> str:
    lines = [f"{axis},activity_mean_f1,user_mean_f1,compression_payload_ratio,error"]
    for p in points:
        if p.report is None:
            lines.append(f"{p.value:g},,,,\"{p.error}\"")
        else:
            comp = p.report.compression.payload_ratio if p.report.compression else ""
            lines.append(
                f"{p.value:g},{p.report.activity.mean_f1:.6f},{p.report.user.mean_f1:.6f},{comp},"
            )
    return "\n".join(lines) + "\n"


def write_report_files(out_dir, reports: dict[str, ExperimentReport], config: dict | None = None):
    """Write one report.txt per variant plus the markdown summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config) if config is not None else None
    for label, report in reports.items():
        safe = label.replace("(", "_").replace(")", "").replace("=", "_").replace(".", "_")
        (out / f"report_{safe}.txt").write_text(report_to_text(report, digest))
    (out / "summary.md").write_text(summary_markdown(reports))
