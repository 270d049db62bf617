"""HTTP service exposing the server side of the pipeline.

The edge role (anonymize + encode) and the cloud role (decode + recognize)
are both available so a thin client can drive the whole flow: upload
models, stream windows through /encode, and hand frame bytes to /recognize.
Models live in an in-process registry keyed by content digest, so uploads
are idempotent.
"""

from __future__ import annotations

import base64
import hashlib
import binascii

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, codec
from ..anonymizer import anonymize_batch, bundle_from_bytes
from ..dataio import SensorWindow
from ..errors import CodecError, DataError
from ..estimators import classifier_from_bytes, predict
from ..features import extract
from .schemas import (
    AnonymizerInfo,
    ClassifierInfo,
    CriteriaRequest,
    CriteriaResponse,
    EncodeRequest,
    EncodeResponse,
    HealthResponse,
    ModelUpload,
    ModelsResponse,
    Prediction,
    RecognizeRequest,
    RecognizeResponse,
)


def _decode_b64(payload: str, what: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=422, detail=f"{what} is not valid base64")


def _model_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def create_app() -> FastAPI:
    app = FastAPI(title="caae recognition service", version=__version__)
    classifiers: dict[str, tuple[str, object]] = {}
    anonymizers: dict[str, tuple[str, object]] = {}

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/models/classifier", response_model=ClassifierInfo)
    def upload_classifier(upload: ModelUpload):
        data = _decode_b64(upload.content_b64, "content_b64")
        try:
            model = classifier_from_bytes(data)
        except DataError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        model_id = _model_id(data)
        classifiers[model_id] = (upload.name, model)
        return ClassifierInfo(
            model_id=model_id,
            name=upload.name,
            kind=model.kind,
            input_kind=model.input_kind,
            input_dim=model.input_dim,
            classes=list(model.classes),
        )

    @app.post("/models/aae", response_model=AnonymizerInfo)
    def upload_anonymizer(upload: ModelUpload):
        data = _decode_b64(upload.content_b64, "content_b64")
        try:
            model = bundle_from_bytes(data)
        except DataError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        model_id = _model_id(data)
        anonymizers[model_id] = (upload.name, model)
        return _anonymizer_info(model_id, upload.name, model)

    def _anonymizer_info(model_id, name, model):
        from ..anonymizer import LATENT_STEPS

        return AnonymizerInfo(
            model_id=model_id,
            name=name,
            latent_channels=model.latent_channels,
            latent_steps=LATENT_STEPS,
            input_channels=model.input_channels,
            input_length=model.input_length,
        )

    @app.get("/models", response_model=ModelsResponse)
    def list_models():
        return ModelsResponse(
            classifiers=[
                ClassifierInfo(
                    model_id=mid,
                    name=name,
                    kind=m.kind,
                    input_kind=m.input_kind,
                    input_dim=m.input_dim,
                    classes=list(m.classes),
                )
                for mid, (name, m) in sorted(classifiers.items())
            ],
            anonymizers=[
                _anonymizer_info(mid, name, m) for mid, (name, m) in sorted(anonymizers.items())
            ],
        )

    @app.post("/encode", response_model=EncodeResponse)
    def encode(req: EncodeRequest):
        entry = anonymizers.get(req.model_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown anonymizer {req.model_id}")
        _, model = entry
        if not req.windows:
            raise HTTPException(status_code=422, detail="windows is empty")
        try:
            windows = [
                SensorWindow(values=np.array(w, dtype=np.float64), user_id=-1, activity_id=-1)
                for w in req.windows
            ]
            blocks = anonymize_batch(windows, model)
            cfg = codec.CodecConfig()
            payload = bytearray()
            payload_bytes = 0
            header_bytes = 0
            reference_bits = 0
            for block in blocks:
                frame = codec.encode_block(block.values, cfg)
                payload.extend(codec.pack_frame(frame))
                payload_bytes += len(frame.payload)
                header_bytes += frame.header_bytes()
                reference_bits += block.values.size * cfg.reference_bits
        except (DataError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return EncodeResponse(
            frames_b64=base64.b64encode(bytes(payload)).decode(),
            frame_count=len(blocks),
            payload_ratio=cfg.reference_bits / cfg.bits_per_code,
            total_ratio=reference_bits / (8 * (payload_bytes + header_bytes)),
        )

    @app.post("/recognize", response_model=RecognizeResponse)
    def recognize(req: RecognizeRequest):
        entry = classifiers.get(req.model_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown classifier {req.model_id}")
        _, model = entry
        data = _decode_b64(req.frames_b64, "frames_b64")
        try:
            frames = codec.read_frames(data)
        except CodecError as exc:
            raise HTTPException(status_code=422, detail=f"bad frame stream: {exc}")
        predictions = []
        for i, frame in enumerate(frames):
            values = codec.decode_frame(frame)
            try:
                if model.input_kind == "feature_vector":
                    if model.feature_rate_hz is None:
                        raise HTTPException(
                            status_code=422,
                            detail="classifier lacks feature_rate_hz; cannot featurize frames",
                        )
                    x = extract(
                        SensorWindow(values=values, user_id=-1, activity_id=-1),
                        model.feature_rate_hz,
                    ).values
                else:
                    x = values.reshape(-1)
                probs, label = predict(model, x)
            except DataError as exc:
                raise HTTPException(status_code=422, detail=f"frame {i}: {exc}")
            predictions.append(
                Prediction(index=i, label=int(label), probabilities=[float(p) for p in probs])
            )
        return RecognizeResponse(predictions=predictions, classes=list(model.classes))

    @app.post("/criteria/check", response_model=CriteriaResponse)
    def criteria(req: CriteriaRequest):
        eps = 1e-12
        threshold = 1.0 / req.n_users
        req1_margin = 0.05 - (req.baseline_activity_f1 - req.variant_activity_f1)
        req2_margin = threshold - req.variant_user_f1
        acc_pass = None
        disagree = None
        if req.variant_user_accuracy is not None:
            acc_pass = req.variant_user_accuracy <= threshold + eps
            disagree = (req2_margin >= -eps) != acc_pass
        return CriteriaResponse(
            req1_pass=req1_margin >= -eps,
            req1_margin=req1_margin,
            req2_pass=req2_margin >= -eps,
            req2_margin=req2_margin,
            req2_threshold=threshold,
            req2_accuracy_pass=acc_pass,
            verdicts_disagree=disagree,
        )

    return app


app = create_app()
