import os
import signal
import threading
import time

from fastapi import FastAPI

from ltcnn.checkpoint import model_size_bytes, read_checkpoint
from ltcnn.config import get_settings
from ltcnn.errors import LtcnnError, enhance_error_message
from ltcnn.logs import configure_logging, get_logger
from ltcnn.model_handle import ModelHandle
from ltcnn.models import HealthResponse, ModelResponse, PredictRequest, PredictResponse, SaliencyRequest, SaliencyResponse
from ltcnn.network import count_parameters, format_parameter_table
from ltcnn.predictor import Predictor

settings = get_settings()
configure_logging(settings.log_level or "INFO", settings.log_json)
log = get_logger(__name__)

app = FastAPI(title="ltcnn inference daemon")
start_time = time.time()

try:
    handle = ModelHandle()
    predictor = Predictor(handle)
    model_available = True
    model_error = None
except LtcnnError as e:
    # no checkpoint configured: the daemon starts, requests fail with the reason
    handle = None
    predictor = None
    model_available = False
    model_error = str(e)


def _try_load() -> bool:
    if not model_available:
        return False
    try:
        handle.load()
        return True
    except Exception as e:
        log.warning("model_load_failed", error=str(e))
        return False


@app.get("/health")
async def health() -> HealthResponse:
    loaded = _try_load()
    return HealthResponse(
        status="healthy" if loaded else "degraded",
        uptime_seconds=time.time() - start_time,
        model_loaded=loaded,
        n_classes=handle.network.spec.n_classes if loaded else None,
    )


@app.post("/predict")
async def predict(request: PredictRequest) -> PredictResponse:
    if not model_available:
        return PredictResponse(success=False, error=enhance_error_message(model_error))
    return predictor.predict(request)


@app.post("/saliency")
async def saliency(request: SaliencyRequest) -> SaliencyResponse:
    if not model_available:
        return SaliencyResponse(success=False, error=enhance_error_message(model_error))
    return predictor.saliency(request)


@app.get("/model")
async def model() -> ModelResponse:
    if not model_available:
        return ModelResponse(success=False, error=enhance_error_message(model_error))
    try:
        ckpt = read_checkpoint(handle.path)
        table = count_parameters(ckpt.spec)
        return ModelResponse(
            success=True,
            checkpoint=str(handle.path),
            class_names=list(ckpt.spec.class_names),
            total_params=table.total,
            params_millions=table.params_millions,
            size_bytes=model_size_bytes(ckpt.spec, ckpt.metadata),
            table=format_parameter_table(table),
        )
    except Exception as e:
        return ModelResponse(success=False, error=enhance_error_message(str(e)))


@app.post("/reload")
async def reload():
    if not model_available:
        return {"success": False, "error": enhance_error_message(model_error)}
    try:
        handle.reload()
        return {"success": True, "checkpoint": str(handle.path)}
    except Exception as e:
        return {"success": False, "error": enhance_error_message(str(e))}


def _schedule_shutdown(delay: float = 0.5) -> None:
    def trigger_shutdown():
        time.sleep(delay)  # let the response go out first
        os.kill(os.getpid(), signal.SIGTERM)

    threading.Thread(target=trigger_shutdown, daemon=True).start()


@app.post("/shutdown")
async def shutdown():
    """Gracefully shutdown the daemon."""
    _schedule_shutdown()
    return {"status": "shutting down"}
