"""Utility and attacker classifiers: multinomial logistic regression and a
small MLP, both trained by full-batch gradient descent with momentum.

Full-batch training keeps the decision function invariant under sample
duplication (the loss is mean-based) and makes runs bit-reproducible.
The same models serve both targets: activity recognition (utility) and
user re-identification (the attack the pipeline defends against).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from . import neural
from .neural import LossSpec, NetworkParams, Sgd, backward, forward, init_network

INPUT_KINDS = ("feature_vector", "flattened_window", "flattened_latent")

CLASSIFIER_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "logreg"
    lr: float = 0.3
    epochs: int = 300
    l2: float = 1e-4
    momentum: float = 0.9
    hidden: tuple[int, ...] = (64,)  # used by the mlp kind only
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("logreg", "mlp"):
            raise ConfigError(f"unknown classifier kind {self.kind!r}")
        if self.lr <= 0 or self.epochs < 1:
            raise ConfigError("lr must be positive and epochs >= 1")
        if self.l2 < 0:
            raise ConfigError("l2 must be nonnegative")


@dataclass
class ClassifierModel:
    kind: str
    params: NetworkParams
    classes: tuple[int, ...]  # sorted original label ids; dense index = position
    input_kind: str
    norm_mean: np.ndarray
    norm_sd: np.ndarray
    feature_rate_hz: float | None = None  # lets a frame consumer re-featurize

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def dense(self, labels) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lookup[int(l)] for l in np.asarray(labels).reshape(-1)])
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]} not in training classes {self.classes}")


def train_classifier(
    inputs,
    labels,
    cfg: ClassifierConfig,
    input_kind: str = "feature_vector",
    feature_rate_hz: float | None = None,
) -> ClassifierModel:
    """Cross-entropy minimization with L2 penalty; deterministic per seed."""
    if input_kind not in INPUT_KINDS:
        raise ConfigError(f"unknown input kind {input_kind!r}")
    X = np.asarray(inputs, dtype=np.float64)
    y_raw = np.asarray(labels).reshape(-1)
    if X.ndim != 2 or X.shape[0] != len(y_raw):
        raise DataError(f"inputs {X.shape} do not match {len(y_raw)} labels")
    classes = tuple(sorted({int(l) for l in y_raw}))
    if len(classes) < 2:
        raise DataError(f"need at least 2 classes, got {classes}")
    dense = {c: i for i, c in enumerate(classes)}
    y = np.array([dense[int(l)] for l in y_raw])

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xn = (X - mean) / sd

    if cfg.kind == "logreg":
        sizes = [X.shape[1], len(classes)]
        acts = ["softmax"]
    else:
        sizes = [X.shape[1], *cfg.hidden, len(classes)]
        acts = ["relu"] * len(cfg.hidden) + ["softmax"]
    params = init_network(sizes, acts, seed=cfg.seed)
    opt = Sgd(lr=cfg.lr, momentum=cfg.momentum)
    spec = LossSpec("cross_entropy")
    for _ in range(cfg.epochs):
        cache = forward(params, Xn)
        grads, _ = backward(params, cache, spec, y)
        if cfg.l2 > 0:
            for layer, g in zip(params.layers, grads):
                g.weights += cfg.l2 * layer.weights
        opt.step(params, grads)

    return ClassifierModel(
        kind=cfg.kind,
        params=params,
        classes=classes,
        input_kind=input_kind,
        norm_mean=mean,
        norm_sd=sd,
        feature_rate_hz=feature_rate_hz,
    )


def predict(model: ClassifierModel, inputs):
    """Class probabilities plus argmax labels (ties go to the smaller id)."""
    X = np.asarray(inputs, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.input_dim:
        raise DataError(f"input dim {X.shape[1]} does not match model dim {model.input_dim}")
    Xn = (X - model.norm_mean) / model.norm_sd
    probs = forward(model.params, Xn).output
    labels = np.array([model.classes[i] for i in probs.argmax(axis=1)])
    if single:
        return probs[0], int(labels[0])
    return probs, labels


def confusion_matrix(predictions, truth, class_count: int) -> np.ndarray:
    predictions = np.asarray(predictions).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if len(predictions) != len(truth):
        raise DataError("predictions and truth differ in length")
    if len(truth) == 0:
        raise DataError("empty label lists")
    for arr, name in ((predictions, "predictions"), (truth, "truth")):
        if arr.min() < 0 or arr.max() >= class_count:
            raise DataError(f"{name} outside [0, {class_count})")
    m = np.zeros((class_count, class_count), dtype=np.int64)
    for p, t in zip(predictions, truth):
        m[t, p] += 1
    return m


def macro_f1(predictions, truth, class_count: int) -> float:
    """Unweighted mean of per-class F1 over all class_count classes.

    A class with zero precision+recall contributes 0 (the standard
    convention for empty classes).
    """
    m = confusion_matrix(predictions, truth, class_count)
    f1s = []
    for c in range(class_count):
        tp = m[c, c]
        fp = m[:, c].sum() - tp
        fn = m[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0)
    return float(np.mean(f1s))


def accuracy(predictions, truth) -> float:
    predictions = np.asarray(predictions).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if len(truth) == 0:
        raise DataError("empty label lists")
    return float(np.mean(predictions == truth))


def predictions_to_csv(path, ids, truth, predicted, probs, classes):
    """Export predictions: one row per window with per-class probabilities."""
    with open(path, "w") as fh:
        header = ["window_id", "truth", "predicted"] + [f"prob_{c}" for c in classes]
        fh.write(",".join(header) + "\n")
        for i in range(len(predicted)):
            t = "" if truth is None else str(int(np.asarray(truth).reshape(-1)[i]))
            row = [str(ids[i]), t, str(int(predicted[i]))]
            row.extend(format(p, ".10g") for p in probs[i])
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# Serialization: JSON envelope with the network blob in base64
# ---------------------------------------------------------------------------


def classifier_to_bytes(model: ClassifierModel) -> bytes:
    doc = {
        "format_version": CLASSIFIER_FORMAT_VERSION,
        "kind": model.kind,
        "classes": list(model.classes),
        "input_kind": model.input_kind,
        "feature_rate_hz": model.feature_rate_hz,
        "norm_mean": model.norm_mean.tolist(),
        "norm_sd": model.norm_sd.tolist(),
        "network_b64": base64.b64encode(neural.network_to_bytes(model.params)).decode(),
    }
    return (json.dumps(doc, sort_keys=True) + "\n").encode()


def classifier_from_bytes(data: bytes) -> ClassifierModel:
    try:
        doc = json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"not a classifier file: {exc}")
    if doc.get("format_version") != CLASSIFIER_FORMAT_VERSION:
        raise DataError(f"unsupported classifier format version {doc.get('format_version')}")
    return ClassifierModel(
        kind=doc["kind"],
        params=neural.network_from_bytes(base64.b64decode(doc["network_b64"])),
        classes=tuple(int(c) for c in doc["classes"]),
        input_kind=doc["input_kind"],
        norm_mean=np.array(doc["norm_mean"], dtype=np.float64),
        norm_sd=np.array(doc["norm_sd"], dtype=np.float64),
        feature_rate_hz=doc["feature_rate_hz"],
    )


def save_classifier(model: ClassifierModel, path):
    with open(path, "wb") as fh:
        fh.write(classifier_to_bytes(model))


def load_classifier(path) -> ClassifierModel:
    with open(path, "rb") as fh:
        return classifier_from_bytes(fh.read())
