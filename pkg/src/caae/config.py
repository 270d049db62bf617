"""Run configuration: one JSON file drives every command.

Flags only override scalar fields (master seed, output directory, variant
name). Parsing reports the offending file and line for syntax errors and
names unknown keys, so a typo fails loudly instead of silently using a
default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .anonymizer import AaeConfig
from .codec import CodecConfig
from .dataio import DatasetSpec, SplitPlan, SyntheticConfig
from .errors import ConfigError
from .estimators import ClassifierConfig
from .harness import DataConfig, EvalConfig, PipelineVariant

_TUPLE_FIELDS = {
    "encoder_widths",
    "decoder_widths",
    "head_widths",
    "hidden",
    "channel_columns",
    "channel_kinds",
}


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}")


def _check_keys(doc: dict, allowed, section: str):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key {sorted(unknown)[0]!r} in section {section!r} "
            f"(allowed: {', '.join(sorted(allowed))})"
        )


def _build(cls, doc: dict, section: str):
    """Construct a config dataclass from a JSON object, strictly."""
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(doc, names, section)
    kwargs = {}
    for key, value in doc.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}")


def parse_dataset_spec(doc: dict) -> DatasetSpec:
    spec = dict(doc)
    if "activity_map" in spec and spec["activity_map"] is not None:
        spec["activity_map"] = {str(k): int(v) for k, v in spec["activity_map"].items()}
    return _build(DatasetSpec, spec, "data.dataset_spec")


def parse_data_config(doc: dict) -> DataConfig:
    allowed = {
        "source",
        "synthetic",
        "dataset_path",
        "dataset_spec",
        "window_seconds",
        "stride_seconds",
        "apply_magnitude",
    }
    _check_keys(doc, allowed, "data")
    kwargs = dict(doc)
    if "synthetic" in kwargs and kwargs["synthetic"] is not None:
        kwargs["synthetic"] = _build(SyntheticConfig, kwargs["synthetic"], "data.synthetic")
    if "dataset_spec" in kwargs and kwargs["dataset_spec"] is not None:
        kwargs["dataset_spec"] = parse_dataset_spec(kwargs["dataset_spec"])
    return DataConfig(**kwargs)


def parse_variant(doc: dict, codec: CodecConfig, aae: AaeConfig) -> PipelineVariant:
    allowed = {"kind", "epsilon", "noise_target", "classify_on_codes", "aae_model_path", "codec", "aae"}
    _check_keys(doc, allowed, "variant")
    kwargs = dict(doc)
    kwargs["codec"] = _build(CodecConfig, kwargs.get("codec", {}), "variant.codec") if "codec" in kwargs else codec
    kwargs["aae"] = _build(AaeConfig, kwargs.get("aae", {}), "variant.aae") if "aae" in kwargs else aae
    return PipelineVariant(**kwargs)


@dataclass
class RunConfig:
    doc: dict  # effective document (overrides applied, out stripped)
    data: DataConfig
    variant: PipelineVariant
    codec: CodecConfig
    aae: AaeConfig
    estimator: ClassifierConfig
    eval: EvalConfig
    master_seed: int
    out_dir: Path
    split: SplitPlan

    def section(self, name: str) -> dict:
        value = self.doc.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"section {name!r} must be an object")
        return value


TOP_LEVEL_KEYS = {
    "data",
    "variant",
    "codec",
    "aae",
    "estimator",
    "eval",
    "master_seed",
    "out_dir",
    "split",
    "experiment",
    "sweep",
    "prepare",
    "train_aae",
    "train_classifier",
    "encode",
    "recognize",
}


def parse_run_config(
    doc: dict,
    *,
    seed_override: int | None = None,
    out_override: str | None = None,
    variant_override: str | None = None,
) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, TOP_LEVEL_KEYS, "<root>")
    effective = json.loads(json.dumps(doc))  # deep copy, JSON-clean
    if seed_override is not None:
        effective["master_seed"] = int(seed_override)
    if variant_override is not None:
        effective.setdefault("variant", {})
        effective["variant"]["kind"] = variant_override
    effective.pop("out_dir", None)

    master_seed = int(effective.get("master_seed", 0))
    codec = _build(CodecConfig, effective.get("codec", {}), "codec")
    aae_doc = dict(effective.get("aae", {}))
    aae_doc.setdefault("seed", master_seed)
    aae = _build(AaeConfig, aae_doc, "aae")
    est_doc = dict(effective.get("estimator", {}))
    est_doc.setdefault("seed", master_seed)
    estimator = _build(ClassifierConfig, est_doc, "estimator")

    eval_doc = dict(effective.get("eval", {}))
    _check_keys(
        eval_doc,
        {"scheme", "folds", "repeats", "held_out_users", "train_fraction", "input_kind"},
        "eval",
    )
    eval_cfg = EvalConfig(estimator=estimator, master_seed=master_seed, **eval_doc)

    data_doc = effective.get("data", {"source": "synthetic"})
    data = parse_data_config(data_doc)

    variant_doc = dict(effective.get("variant", {"kind": "baseline"}))
    variant = parse_variant(variant_doc, codec, aae)

    split_doc = dict(effective.get("split", {"mode": "user_ratio"}))
    split_doc.setdefault("seed", master_seed)
    split = _build(SplitPlan, split_doc, "split")

    out_dir = Path(out_override) if out_override else Path(doc.get("out_dir", "runs"))
    return RunConfig(
        doc=effective,
        data=data,
        variant=variant,
        codec=codec,
        aae=aae,
        estimator=estimator,
        eval=eval_cfg,
        master_seed=master_seed,
        out_dir=out_dir,
        split=split,
    )
