"""Command-line entry point.

Subcommands cover the whole pipeline: prepare (ingest + window + split),
train-aae, train-classifier, encode (edge side: anonymize + compress),
recognize (server side: decode + classify, locally or against a running
service), experiment, sweep, report, and serve (run the HTTP service).

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
error. A failed application criterion is a report outcome, not a process
failure.
"""

from __future__ import annotations

import argparse
import base64
import csv as csv_mod
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, codec
from .anonymizer import LATENT_STEPS, anonymize_batch, load_bundle, save_bundle, train_aae
from .archive import read_archive, write_archive
from .config import RunConfig, load_config_file, parse_run_config
from .dataio import SensorWindow, make_split
from .errors import ConfigError, DataError
from .estimators import load_classifier, predict, save_classifier, train_classifier
from .features import extract, extract_matrix
from .harness import (
    PipelineVariant,
    apply_variant,
    ingest,
    run_suite,
    sweep as run_sweep,
    variant_label,
)
from .reporting import (
    config_digest,
    report_from_text,
    summary_markdown,
    tradeoff_csv,
    write_report_files,
)

log = logging.getLogger("caae")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="caae", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--variant", help="override the variant kind")
        return p

    common(sub.add_parser("prepare", help="ingest, window and split a dataset"))
    common(sub.add_parser("train-aae", help="train the anonymizing autoencoder"))
    common(sub.add_parser("train-classifier", help="train an activity or user classifier"))

    enc = common(sub.add_parser("encode", help="anonymize windows and write frames"))
    enc.add_argument("--bundle", help="trained AAE bundle (overrides config)")
    enc.add_argument("--input", help="archive directory or CSV file, '-' for stdin")
    enc.add_argument("--frames-out", help="output frame file (overrides config)")

    rec = sub.add_parser("recognize", help="decode frames and classify")
    rec.add_argument("--config", help="JSON run configuration (optional)")
    rec.add_argument("--frames", help="frame file to decode")
    rec.add_argument("--classifier", help="trained classifier file")
    rec.add_argument("--out", help="predictions CSV path")
    rec.add_argument("--server", help="recognize via a running service at this base URL")

    common(sub.add_parser("experiment", help="run experiment variants and report"))
    common(sub.add_parser("sweep", help="sweep an axis and emit a trade-off table"))

    rep = sub.add_parser("report", help="print a stored report")
    rep.add_argument("path", help="report file or directory of report_*.txt")
    rep.add_argument("--out", help="write a markdown summary here")

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)

    return parser


def _load_run_config(args) -> RunConfig:
    doc = load_config_file(args.config)
    return parse_run_config(
        doc,
        seed_override=getattr(args, "seed", None),
        out_override=getattr(args, "out", None),
        variant_override=getattr(args, "variant", None),
    )


def _windows_from_config(cfg: RunConfig, section: dict):
    archive = section.get("archive")
    if archive:
        windows, manifest = read_archive(archive)
        return windows, manifest["sample_rate_hz"], manifest["window_seconds"]
    return ingest(cfg.data)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = _load_run_config(args)
    windows, rate, seconds = ingest(cfg.data)
    split = make_split(windows, cfg.split)
    out = cfg.out_dir
    manifest = write_archive(
        out,
        windows,
        sample_rate_hz=rate,
        window_seconds=seconds,
        split=split,
        config_echo=cfg.doc,
    )
    print(f"archive: {out}")
    print(f"windows: {manifest['n_windows']} ({manifest['channels']}x{manifest['window_length']})")
    print(
        f"split: train={len(split.train)} validation={len(split.validation)} test={len(split.test)}"
    )
    print(f"digest: {manifest['data_digest']}")
    return 0


def cmd_train_aae(args) -> int:
    cfg = _load_run_config(args)
    section = cfg.section("train_aae")
    windows, _, _ = _windows_from_config(cfg, section)
    if section.get("archive"):
        _, manifest = read_archive(section["archive"])
        train_idx = manifest.get("split", {}).get("train")
        train_windows = [windows[i] for i in train_idx] if train_idx else windows
    else:
        train_windows = make_split(windows, cfg.split).train
    model, train_log = train_aae(train_windows, cfg.aae)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    bundle_path = Path(section.get("bundle_out") or cfg.out_dir / "model.aae")
    save_bundle(model, bundle_path)
    log_path = cfg.out_dir / "training_log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,reconstruction,activity,user,total\n")
        for i in range(len(train_log.reconstruction)):
            fh.write(
                f"{i},{train_log.reconstruction[i]:.8g},{train_log.activity[i]:.8g},"
                f"{train_log.user[i]:.8g},{train_log.total[i]:.8g}\n"
            )
    print(f"bundle: {bundle_path}")
    print(f"training log: {log_path}")
    print(f"final reconstruction loss: {train_log.reconstruction[-1]:.6g}")
    return 0


def _transform_for_classifier(cfg: RunConfig, windows, rate, seconds, section):
    """Apply the configured variant transform before classifier training."""
    variant = cfg.variant
    if section.get("bundle"):
        variant = replace(variant, aae_model_path=section["bundle"])
    transformed, eff_rate, _, _, _ = apply_variant(
        windows, rate, seconds, variant, cfg.master_seed
    )
    return transformed, eff_rate


def cmd_train_classifier(args) -> int:
    cfg = _load_run_config(args)
    section = cfg.section("train_classifier")
    target = section.get("target", "activity")
    if target not in ("activity", "user"):
        raise ConfigError(f"train_classifier.target must be activity or user, got {target!r}")
    windows, rate, seconds = _windows_from_config(cfg, section)
    transformed, eff_rate = _transform_for_classifier(cfg, windows, rate, seconds, section)

    input_kind = section.get("input_kind", "feature_vector")
    if input_kind == "feature_vector":
        X, y_act, y_user = extract_matrix(transformed, eff_rate)
        feature_rate = eff_rate
    else:
        X = np.stack([w.values.reshape(-1) for w in transformed])
        y_act = np.array([w.activity_id for w in transformed])
        y_user = np.array([w.user_id for w in transformed])
        feature_rate = None
        input_kind = "flattened_latent" if cfg.variant.kind in ("aae", "c_aae") else "flattened_window"
    y = y_act if target == "activity" else y_user
    model = train_classifier(X, y, cfg.estimator, input_kind=input_kind, feature_rate_hz=feature_rate)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(section.get("out") or cfg.out_dir / f"classifier_{target}.json")
    save_classifier(model, out_path)
    print(f"classifier: {out_path}")
    print(f"classes: {list(model.classes)}")
    return 0


def _iter_windows_from_csv(path, cfg: RunConfig):
    from .dataio import load_dataset
    from .harness import DataConfig

    if cfg.data.dataset_spec is None:
        raise ConfigError("encoding from CSV needs data.dataset_spec in the config")
    result = load_dataset(path, cfg.data.dataset_spec)
    windows = []
    from .dataio import window as cut

    for rec in result.recordings:
        windows.extend(cut(rec, cfg.data.window_seconds, cfg.data.stride_seconds))
    return windows


def cmd_encode(args) -> int:
    cfg = _load_run_config(args)
    section = cfg.section("encode")
    bundle_path = args.bundle or section.get("bundle")
    if not bundle_path:
        raise ConfigError("encode needs --bundle or an encode.bundle config entry")
    model = load_bundle(bundle_path)

    source = args.input or section.get("input")
    if not source:
        raise ConfigError("encode needs --input or an encode.input config entry")
    if source == "-":
        import io

        data = sys.stdin.read()
        tmp = cfg.out_dir / "_stdin.csv"
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        tmp.write_text(data)
        windows = _iter_windows_from_csv(tmp, cfg)
        tmp.unlink()
    elif Path(source).is_dir():
        windows, _ = read_archive(source)
    else:
        windows = _iter_windows_from_csv(source, cfg)
    if not windows:
        raise DataError(f"no windows to encode from {source}")

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    frames_path = Path(args.frames_out or section.get("frames_out") or cfg.out_dir / "frames.bin")
    blocks = anonymize_batch(windows, model)
    payload_bytes = 0
    header_bytes = 0
    with open(frames_path, "wb") as fh:
        for block in blocks:
            frame = codec.encode_block(block.values, cfg.codec)
            fh.write(codec.pack_frame(frame))
            payload_bytes += len(frame.payload)
            header_bytes += frame.header_bytes()
    ratio = codec.compression_ratio(frame, cfg.codec.reference_bits)
    reference_bits = sum(
        b.values.size * cfg.codec.reference_bits for b in blocks
    )
    total_ratio = reference_bits / (8 * (payload_bytes + header_bytes))
    print(f"frames: {frames_path} ({len(blocks)} frames)")
    print(f"compression ratio (payload): {ratio:g}")
    print(f"compression ratio (with headers): {total_ratio:.3f}")
    return 0


def _recognize_rows(frames, classifier):
    rows = []
    for i, frame in enumerate(frames):
        values = codec.decode_frame(frame)
        if classifier.input_kind == "feature_vector":
            if classifier.feature_rate_hz is None:
                raise DataError("classifier lacks feature_rate_hz; cannot featurize frames")
            fv = extract(
                SensorWindow(values=values, user_id=-1, activity_id=-1),
                classifier.feature_rate_hz,
            )
            x = fv.values
        else:
            x = values.reshape(-1)
        probs, label = predict(classifier, x)
        rows.append((i, int(label), probs))
    return rows


def _write_predictions(path, rows, classes):
    with open(path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["frame_index", "predicted"] + [f"prob_{c}" for c in classes])
        for i, label, probs in rows:
            writer.writerow([i, label] + [format(p, ".10g") for p in probs])


def cmd_recognize(args) -> int:
    section = _load_run_config(args).section("recognize") if args.config else {}
    frames_path = args.frames or section.get("frames")
    classifier_path = args.classifier or section.get("classifier")
    if not frames_path or not classifier_path:
        raise ConfigError("recognize needs --frames and --classifier (or config entries)")
    out_path = Path(args.out or section.get("out") or "predictions.csv")

    if args.server:
        return _recognize_remote(args.server, frames_path, classifier_path, out_path)

    frames = codec.read_frames(Path(frames_path).read_bytes())
    classifier = load_classifier(classifier_path)
    rows = _recognize_rows(frames, classifier)
    _write_predictions(out_path, rows, classifier.classes)
    print(f"predictions: {out_path} ({len(rows)} rows)")
    return 0


def _recognize_remote(server, frames_path, classifier_path, out_path) -> int:
    """Thin-client mode: upload the classifier, post frames, write the CSV."""
    import httpx

    base = server.rstrip("/")
    classifier_bytes = Path(classifier_path).read_bytes()
    frames_bytes = Path(frames_path).read_bytes()
    with httpx.Client(base_url=base, timeout=60.0) as client:
        up = client.post(
            "/models/classifier",
            json={
                "name": Path(classifier_path).name,
                "content_b64": base64.b64encode(classifier_bytes).decode(),
            },
        )
        if up.status_code != 200:
            raise DataError(f"classifier upload failed: {up.status_code} {up.text}")
        model_id = up.json()["model_id"]
        resp = client.post(
            "/recognize",
            json={"model_id": model_id, "frames_b64": base64.b64encode(frames_bytes).decode()},
        )
        if resp.status_code != 200:
            raise DataError(f"recognize failed: {resp.status_code} {resp.text}")
        doc = resp.json()
    classes = doc["classes"]
    rows = [
        (p["index"], p["label"], p["probabilities"]) for p in doc["predictions"]
    ]
    _write_predictions(out_path, rows, classes)
    print(f"predictions: {out_path} ({len(rows)} rows, via {base})")
    return 0


def _experiment_variants(cfg: RunConfig) -> list[PipelineVariant]:
    from .config import parse_variant

    section = cfg.section("experiment")
    entries = section.get("variants")
    if entries:
        variants = []
        for entry in entries:
            if isinstance(entry, str):
                entry = {"kind": entry}
            variants.append(parse_variant(dict(entry), cfg.codec, cfg.aae))
        return variants
    if cfg.variant.kind == "baseline":
        return [cfg.variant]
    return [PipelineVariant(kind="baseline", codec=cfg.codec, aae=cfg.aae), cfg.variant]


def cmd_experiment(args) -> int:
    cfg = _load_run_config(args)
    variants = _experiment_variants(cfg)
    reports = run_suite(variants, cfg.data, cfg.eval)
    write_report_files(cfg.out_dir, reports, config=cfg.doc)
    for label, report in sorted(reports.items(), key=lambda kv: (kv[0] != "baseline", kv[0])):
        line = (
            f"{label}: activity F1 {report.activity.mean_f1:.4f} "
            f"user F1 {report.user.mean_f1:.4f}"
        )
        if report.criteria is not None:
            line += (
                f" | req1 {'pass' if report.criteria.req1_pass else 'fail'}"
                f" req2 {'pass' if report.criteria.req2_pass else 'fail'}"
            )
        print(line)
    print(f"reports: {cfg.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    section = cfg.section("sweep")
    axis = section.get("axis")
    values = section.get("values")
    if not axis or not values:
        raise ConfigError("sweep needs sweep.axis and sweep.values in the config")
    points = run_sweep(axis, values, cfg.variant, cfg.data, cfg.eval)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.out_dir / "tradeoff.csv"
    csv_path.write_text(tradeoff_csv(axis, points))
    reports = {
        f"{axis}={p.value:g}": p.report for p in points if p.report is not None
    }
    if reports:
        write_report_files(cfg.out_dir, reports, config=cfg.doc)
    for p in points:
        if p.report is None:
            print(f"{axis}={p.value:g}: ERROR {p.error}")
        else:
            print(
                f"{axis}={p.value:g}: activity F1 {p.report.activity.mean_f1:.4f} "
                f"user F1 {p.report.user.mean_f1:.4f}"
            )
    print(f"trade-off table: {csv_path}")
    return 0  # per-point errors are report outcomes, not process failures


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        files = sorted(path.glob("report_*.txt"))
        if not files:
            raise DataError(f"no report_*.txt files in {path}")
    else:
        if not path.exists():
            raise DataError(f"report file not found: {path}")
        files = [path]
    reports = {}
    for f in files:
        report = report_from_text(f.read_text())
        reports[report.variant_label] = report
        print(f"{report.variant_label}:")
        print(f"  activity F1 {report.activity.mean_f1:.4f} +- {report.activity.sd_f1:.4f}")
        print(f"  user F1 {report.user.mean_f1:.4f} +- {report.user.sd_f1:.4f}")
        if report.compression:
            print(
                f"  compression {report.compression.payload_ratio:g}x payload, "
                f"{report.compression.total_ratio:.2f}x with headers"
            )
        if report.criteria:
            print(
                f"  criteria: req1 {'pass' if report.criteria.req1_pass else 'fail'} "
                f"({report.criteria.req1_margin:+.4f}), "
                f"req2 {'pass' if report.criteria.req2_pass else 'fail'} "
                f"({report.criteria.req2_margin:+.4f})"
            )
    if args.out:
        Path(args.out).write_text(summary_markdown(reports))
        print(f"summary: {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train-aae": cmd_train_aae,
    "train-classifier": cmd_train_classifier,
    "encode": cmd_encode,
    "recognize": cmd_recognize,
    "experiment": cmd_experiment,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    level = os.environ.get("CAAE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
