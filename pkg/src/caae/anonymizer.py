"""Anonymizing autoencoder: window -> identity-suppressed latent block.

The encoder maps a standardized, flattened window to a [d x 16] latent
block. Training minimizes

    lambda_rec * MSE(x, decode(encode(x)))
  + lambda_act * CE(activity_head(z), activity)
  - lambda_id  * CE(user_head(z), user)

where the last term is realized the standard adversarial way: the user head
itself trains to identify users, and its gradient is sign-flipped and
scaled by lambda_id on the way back into the encoder. The trained encoder
is the deployable transform; decoder and heads exist for training and
server-side ablations only.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import SensorWindow
from .errors import ConfigError, DataError
from . import neural
from .neural import LossSpec, NetworkParams, Sgd, backward, backward_from_output, forward, grad_reverse, init_network, loss_value
from .seeding import derive_seed

LATENT_STEPS = 16
BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AaeConfig:
    latent_channels: int = 8
    encoder_widths: tuple[int, ...] = (256,)
    decoder_widths: tuple[int, ...] = (256,)
    head_widths: tuple[int, ...] = (32,)
    lambda_rec: float = 1.0
    lambda_act: float = 1.0
    lambda_id: float = 1.0
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.latent_channels < 1:
            raise ConfigError("latent_channels must be >= 1")
        for name in ("lambda_rec", "lambda_act", "lambda_id"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs/batch_size must be >= 1 and lr positive")


@dataclass(frozen=True)
class LatentBlock:
    values: np.ndarray  # [latent_channels x LATENT_STEPS]
    user_id: int  # evaluation bookkeeping only, never used by the transform
    activity_id: int


@dataclass
class AaeModel:
    encoder: NetworkParams
    decoder: NetworkParams
    activity_head: NetworkParams
    user_head: NetworkParams
    norm_mean: np.ndarray  # per input channel
    norm_sd: np.ndarray
    input_channels: int
    input_length: int
    activity_classes: tuple[int, ...]
    user_classes: tuple[int, ...]
    config: AaeConfig

    @property
    def latent_channels(self) -> int:
        return self.config.latent_channels


@dataclass
class TrainingLog:
    reconstruction: list[float]  # per-epoch means
    activity: list[float]
    user: list[float]
    total: list[float]


def _window_tensor(windows):
    if not windows:
        raise DataError("no training windows")
    shape = windows[0].values.shape
    for w in windows:
        if w.values.shape != shape:
            raise DataError(f"windows differ in shape: {w.values.shape} vs {shape}")
    return np.stack([w.values for w in windows])  # [N, C, W]


def _standardize(tensor, mean, sd):
    return (tensor - mean[np.newaxis, :, np.newaxis]) / sd[np.newaxis, :, np.newaxis]


def train_aae(train_windows, cfg: AaeConfig):
    """Train encoder/decoder/heads; returns (model, per-epoch loss log)."""
    tensor = _window_tensor(train_windows)
    n, channels, length = tensor.shape
    activities = sorted({w.activity_id for w in train_windows})
    users = sorted({w.user_id for w in train_windows})
    if len(activities) < 2 or len(users) < 2:
        raise DataError(
            f"training needs >= 2 activities and >= 2 users, got "
            f"{len(activities)} activities / {len(users)} users"
        )
    act_index = {a: i for i, a in enumerate(activities)}
    user_index = {u: i for i, u in enumerate(users)}
    y_act = np.array([act_index[w.activity_id] for w in train_windows])
    y_user = np.array([user_index[w.user_id] for w in train_windows])

    mean = tensor.mean(axis=(0, 2))
    sd = tensor.std(axis=(0, 2))
    sd = np.where(sd > 0, sd, 1.0)
    X = _standardize(tensor, mean, sd).reshape(n, channels * length)

    d = cfg.latent_channels
    latent_dim = d * LATENT_STEPS
    enc_sizes = [channels * length, *cfg.encoder_widths, latent_dim]
    dec_sizes = [latent_dim, *cfg.decoder_widths, channels * length]
    head_acts = ["relu"] * len(cfg.head_widths) + ["softmax"]
    encoder = init_network(enc_sizes, ["tanh"] * len(cfg.encoder_widths) + ["identity"],
                           seed=derive_seed(cfg.seed, "encoder"))
    decoder = init_network(dec_sizes, ["tanh"] * len(cfg.decoder_widths) + ["identity"],
                           seed=derive_seed(cfg.seed, "decoder"))
    activity_head = init_network([latent_dim, *cfg.head_widths, len(activities)], head_acts,
                                 seed=derive_seed(cfg.seed, "activity_head"))
    user_head = init_network([latent_dim, *cfg.head_widths, len(users)], head_acts,
                             seed=derive_seed(cfg.seed, "user_head"))

    optimizers = {
        "enc": Sgd(cfg.lr, cfg.momentum),
        "dec": Sgd(cfg.lr, cfg.momentum),
        "act": Sgd(cfg.lr, cfg.momentum),
        "user": Sgd(cfg.lr, cfg.momentum),
    }
    rec_spec = LossSpec("mse", cfg.lambda_rec)
    act_spec = LossSpec("cross_entropy", cfg.lambda_act)
    user_spec = LossSpec("cross_entropy", 1.0)  # the adversary trains at full strength

    rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    log = TrainingLog([], [], [], [])
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb, ub = X[idx], y_act[idx], y_user[idx]

            enc_cache = forward(encoder, xb)
            z = enc_cache.output
            dec_cache = forward(decoder, z)
            act_cache = forward(activity_head, z)
            user_cache = forward(user_head, z)

            dec_grads, dz_rec = backward(decoder, dec_cache, rec_spec, xb)
            act_grads, dz_act = backward(activity_head, act_cache, act_spec, yb)
            user_grads, dz_user = backward(user_head, user_cache, user_spec, ub)
            dz = dz_rec + dz_act + grad_reverse(dz_user, cfg.lambda_id)
            enc_grads, _ = backward_from_output(encoder, enc_cache, dz)

            optimizers["dec"].step(decoder, dec_grads)
            optimizers["act"].step(activity_head, act_grads)
            optimizers["user"].step(user_head, user_grads)
            optimizers["enc"].step(encoder, enc_grads)

            w = len(idx)
            sums += w * np.array(
                [
                    loss_value(LossSpec("mse"), dec_cache.output, xb),
                    loss_value(LossSpec("cross_entropy"), act_cache.output, yb),
                    loss_value(LossSpec("cross_entropy"), user_cache.output, ub),
                ]
            )
        rec, act, user = sums / n
        log.reconstruction.append(float(rec))
        log.activity.append(float(act))
        log.user.append(float(user))
        log.total.append(float(cfg.lambda_rec * rec + cfg.lambda_act * act - cfg.lambda_id * user))

    model = AaeModel(
        encoder=encoder,
        decoder=decoder,
        activity_head=activity_head,
        user_head=user_head,
        norm_mean=mean,
        norm_sd=sd,
        input_channels=channels,
        input_length=length,
        activity_classes=tuple(activities),
        user_classes=tuple(users),
        config=cfg,
    )
    return model, log


def anonymize(win: SensorWindow, model: AaeModel) -> LatentBlock:
    """Deterministic encoder application; labels ride along for evaluation."""
    if win.values.shape != (model.input_channels, model.input_length):
        raise DataError(
            f"window shape {win.values.shape} does not match model input "
            f"({model.input_channels}, {model.input_length})"
        )
    x = _standardize(win.values[np.newaxis], model.norm_mean, model.norm_sd)
    z = forward(model.encoder, x.reshape(1, -1)).output[0]
    return LatentBlock(
        values=z.reshape(model.latent_channels, LATENT_STEPS),
        user_id=win.user_id,
        activity_id=win.activity_id,
    )


def anonymize_batch(windows, model: AaeModel) -> list[LatentBlock]:
    tensor = _window_tensor(windows)
    if tensor.shape[1:] != (model.input_channels, model.input_length):
        raise DataError(f"window shape {tensor.shape[1:]} does not match model input")
    x = _standardize(tensor, model.norm_mean, model.norm_sd).reshape(len(windows), -1)
    z = forward(model.encoder, x).output
    return [
        LatentBlock(
            values=z[i].reshape(model.latent_channels, LATENT_STEPS),
            user_id=w.user_id,
            activity_id=w.activity_id,
        )
        for i, w in enumerate(windows)
    ]


def reconstruct(block: LatentBlock, model: AaeModel) -> SensorWindow:
    """Decoder application; evaluation-side only, not on the recognition path."""
    if block.values.shape != (model.latent_channels, LATENT_STEPS):
        raise DataError(f"latent shape {block.values.shape} does not match model")
    flat = forward(model.decoder, block.values.reshape(1, -1)).output[0]
    values = flat.reshape(model.input_channels, model.input_length)
    values = values * model.norm_sd[:, np.newaxis] + model.norm_mean[:, np.newaxis]
    return SensorWindow(values=values, user_id=block.user_id, activity_id=block.activity_id)


def reconstruction_mse(windows, model: AaeModel) -> float:
    total = 0.0
    for w in windows:
        rec = reconstruct(anonymize(w, model), model)
        total += float(np.mean((rec.values - w.values) ** 2))
    return total / len(windows)


# ---------------------------------------------------------------------------
# Model bundle: networks + normalization + config echo, versioned
# ---------------------------------------------------------------------------


def bundle_to_bytes(model: AaeModel) -> bytes:
    doc = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "config": asdict(model.config),
        "input_channels": model.input_channels,
        "input_length": model.input_length,
        "norm_mean": model.norm_mean.tolist(),
        "norm_sd": model.norm_sd.tolist(),
        "activity_classes": list(model.activity_classes),
        "user_classes": list(model.user_classes),
        "networks": {
            name: base64.b64encode(neural.network_to_bytes(net)).decode()
            for name, net in (
                ("encoder", model.encoder),
                ("decoder", model.decoder),
                ("activity_head", model.activity_head),
                ("user_head", model.user_head),
            )
        },
    }
    return (json.dumps(doc, sort_keys=True) + "\n").encode()


def bundle_from_bytes(data: bytes) -> AaeModel:
    try:
        doc = json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"not a model bundle: {exc}")
    version = doc.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise DataError(f"unsupported bundle format version {version}")
    cfg_doc = dict(doc["config"])
    for key in ("encoder_widths", "decoder_widths", "head_widths"):
        cfg_doc[key] = tuple(cfg_doc[key])
    cfg = AaeConfig(**cfg_doc)
    nets = {
        name: neural.network_from_bytes(base64.b64decode(blob))
        for name, blob in doc["networks"].items()
    }
    return AaeModel(
        encoder=nets["encoder"],
        decoder=nets["decoder"],
        activity_head=nets["activity_head"],
        user_head=nets["user_head"],
        norm_mean=np.array(doc["norm_mean"], dtype=np.float64),
        norm_sd=np.array(doc["norm_sd"], dtype=np.float64),
        input_channels=int(doc["input_channels"]),
        input_length=int(doc["input_length"]),
        activity_classes=tuple(int(a) for a in doc["activity_classes"]),
        user_classes=tuple(int(u) for u in doc["user_classes"]),
        config=cfg,
    )


def save_bundle(model: AaeModel, path):
    with open(path, "wb") as fh:
        fh.write(bundle_to_bytes(model))


def load_bundle(path) -> AaeModel:
    with open(path, "rb") as fh:
        return bundle_from_bytes(fh.read())
