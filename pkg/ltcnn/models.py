from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, model_validator


class InputRequest(BaseModel):
    tensor: Optional[List[List[List[float]]]] = None  # C x H x W, already preprocessed
    image_path: Optional[str] = None

    @model_validator(mode="after")
    def _one_input(self):
        if (self.tensor is None) == (self.image_path is None):
            raise ValueError("give exactly one of 'tensor' or 'image_path'")
        return self


class PredictRequest(InputRequest):
    top_k: int = Field(1, ge=1)


class PredictResponse(BaseModel):
    success: bool
    class_name: Optional[str] = None
    class_index: Optional[int] = None
    prob: Optional[float] = None
    probs: Optional[Dict[str, float]] = None  # top_k classes, most probable first
    error: Optional[str] = None
    execution_time: Optional[float] = None


class SaliencyRequest(InputRequest):
    target: Optional[Union[int, str]] = None


class SaliencyResponse(BaseModel):
    success: bool
    shape: Optional[List[int]] = None
    values: Optional[List[List[float]]] = None
    target: Optional[int] = None
    error: Optional[str] = None
    execution_time: Optional[float] = None


class ModelResponse(BaseModel):
    success: bool
    checkpoint: Optional[str] = None
    class_names: Optional[List[str]] = None
    total_params: Optional[int] = None
    params_millions: Optional[str] = None
    size_bytes: Optional[int] = None
    table: Optional[str] = None
    error: Optional[str] = None


class HealthResponse(BaseModel):
    status: str  # "healthy", "degraded"
    uptime_seconds: float
    model_loaded: bool
    n_classes: Optional[int] = None
