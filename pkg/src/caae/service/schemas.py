"""Request/response models for the recognition service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ModelUpload(BaseModel):
    name: str = Field(min_length=1, max_length=200)
    content_b64: str


class ClassifierInfo(BaseModel):
    model_id: str
    name: str
    kind: str
    input_kind: str
    input_dim: int
    classes: list[int]


class AnonymizerInfo(BaseModel):
    model_id: str
    name: str
    latent_channels: int
    latent_steps: int
    input_channels: int
    input_length: int


class ModelsResponse(BaseModel):
    classifiers: list[ClassifierInfo]
    anonymizers: list[AnonymizerInfo]


class EncodeRequest(BaseModel):
    model_id: str
    windows: list[list[list[float]]]  # [n][channels][samples]


class EncodeResponse(BaseModel):
    frames_b64: str
    frame_count: int
    payload_ratio: float
    total_ratio: float


class RecognizeRequest(BaseModel):
    model_id: str
    frames_b64: str


class Prediction(BaseModel):
    index: int
    label: int
    probabilities: list[float]


class RecognizeResponse(BaseModel):
    predictions: list[Prediction]
    classes: list[int]


class CriteriaRequest(BaseModel):
    baseline_activity_f1: float = Field(ge=0.0, le=1.0)
    variant_activity_f1: float = Field(ge=0.0, le=1.0)
    variant_user_f1: float = Field(ge=0.0, le=1.0)
    n_users: int = Field(ge=2)
    variant_user_accuracy: float | None = Field(default=None, ge=0.0, le=1.0)


class CriteriaResponse(BaseModel):
    req1_pass: bool
    req1_margin: float
    req2_pass: bool
    req2_margin: float
    req2_threshold: float
    req2_accuracy_pass: bool | None
    verdicts_disagree: bool | None
