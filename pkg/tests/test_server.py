import numpy as np
import pytest
from fastapi.testclient import TestClient
from pydantic import ValidationError

from ltcnn import server
from ltcnn.checkpoint import save_checkpoint
from ltcnn.errors import ConfigError
from ltcnn.model_handle import ModelHandle
from ltcnn.models import PredictRequest
from ltcnn.network import build_network, count_parameters
from ltcnn.predictor import Predictor, top_k
from ltcnn.tensor import make_rng


@pytest.fixture
def checkpoint_path(tiny_spec, tmp_path):
    path = tmp_path / "best.ltcnn"
    save_checkpoint(build_network(tiny_spec, make_rng(0, "init")), path)
    return path


@pytest.fixture
def api(checkpoint_path, monkeypatch):
    """TestClient against the app with a tiny checkpoint loaded."""
    handle = ModelHandle(str(checkpoint_path))
    monkeypatch.setattr(server, "handle", handle)
    monkeypatch.setattr(server, "predictor", Predictor(handle))
    monkeypatch.setattr(server, "model_available", True)
    monkeypatch.setattr(server, "model_error", None)
    return TestClient(server.app)


@pytest.fixture
def api_without_model(monkeypatch):
    monkeypatch.setattr(server, "handle", None)
    monkeypatch.setattr(server, "predictor", None)
    monkeypatch.setattr(server, "model_available", False)
    monkeypatch.setattr(server, "model_error", "no checkpoint configured: set LTCNN_CHECKPOINT or pass --checkpoint")
    return TestClient(server.app)


def zeros_tensor():
    return np.zeros((3, 16, 16)).tolist()


class TestHealth:
    """Test the health endpoint."""

    def test_healthy_with_model(self, api):
        """Test that a loadable checkpoint reports healthy."""
        body = api.get("/health").json()
        assert body["status"] == "healthy"
        assert body["model_loaded"] is True
        assert body["n_classes"] == 2

    def test_degraded_without_model(self, api_without_model):
        """Test that the daemon stays up without a checkpoint."""
        body = api_without_model.get("/health").json()
        assert body["status"] == "degraded"
        assert body["model_loaded"] is False


class TestPredict:
    """Test prediction over HTTP."""

    def test_tensor_input(self, api):
        """Test a preprocessed tensor request with top-2 probabilities."""
        body = api.post("/predict", json={"tensor": zeros_tensor(), "top_k": 2}).json()
        assert body["success"] is True
        assert body["class_name"] in ("left", "right")
        assert 0.5 <= body["prob"] <= 1.0
        assert list(body["probs"])[0] == body["class_name"]
        assert sum(body["probs"].values()) == pytest.approx(1.0)

    def test_image_input(self, api, halves_tree):
        """Test a request naming an image file."""
        body = api.post("/predict", json={"image_path": str(halves_tree / "left" / "img0.png")}).json()
        assert body["success"] is True
        assert body["class_index"] in (0, 1)

    def test_missing_image(self, api, tmp_path):
        """Test that an unreadable path is reported, not raised."""
        body = api.post("/predict", json={"image_path": str(tmp_path / "nope.png")}).json()
        assert body["success"] is False
        assert "cannot decode" in body["error"]

    def test_wrong_tensor_shape(self, api):
        """Test that a tensor of the wrong size is a shape mismatch."""
        body = api.post("/predict", json={"tensor": np.zeros((3, 8, 8)).tolist()}).json()
        assert body["success"] is False
        assert "shape mismatch" in body["error"]

    def test_both_inputs_rejected(self, api):
        """Test that a request must carry exactly one input."""
        response = api.post("/predict", json={"tensor": zeros_tensor(), "image_path": "x.png"})
        assert response.status_code == 422

    def test_without_model(self, api_without_model):
        """Test that requests explain the missing checkpoint."""
        body = api_without_model.post("/predict", json={"tensor": zeros_tensor()}).json()
        assert body["success"] is False
        assert "no checkpoint configured" in body["error"]


class TestSaliency:
    """Test saliency over HTTP."""

    def test_named_target(self, api):
        """Test that a class name selects the target and the map has the input size."""
        body = api.post("/saliency", json={"tensor": zeros_tensor(), "target": "right"}).json()
        assert body["success"] is True
        assert body["target"] == 1
        assert body["shape"] == [16, 16]
        assert min(min(row) for row in body["values"]) >= 0

    def test_unknown_target(self, api):
        """Test that an unknown class name is reported."""
        body = api.post("/saliency", json={"tensor": zeros_tensor(), "target": "cat"}).json()
        assert body["success"] is False
        assert "unknown class 'cat'" in body["error"]


class TestModelInfo:
    """Test model introspection and reload."""

    def test_model(self, api, checkpoint_path, tiny_spec):
        """Test parameter count and the on-disk size."""
        body = api.get("/model").json()
        assert body["success"] is True
        assert body["class_names"] == ["left", "right"]
        assert body["total_params"] == count_parameters(tiny_spec).total
        assert body["size_bytes"] == checkpoint_path.stat().st_size

    def test_reload(self, api, checkpoint_path):
        """Test that reload reads the file again."""
        body = api.post("/reload").json()
        assert body == {"success": True, "checkpoint": str(checkpoint_path)}
        assert server.handle.is_loaded()

    def test_shutdown_schedules_signal(self, api, mocker):
        """Test that shutdown answers and schedules the signal."""
        schedule = mocker.patch("ltcnn.server._schedule_shutdown")
        assert api.post("/shutdown").json() == {"status": "shutting down"}
        schedule.assert_called_once_with()


class TestModelHandle:
    """Test the checkpoint holder."""

    def test_requires_path(self, monkeypatch):
        """Test that a handle without any configured checkpoint is refused."""
        monkeypatch.delenv("LTCNN_CHECKPOINT", raising=False)
        with pytest.raises(ConfigError, match="no checkpoint configured"):
            ModelHandle()

    def test_loads_once(self, checkpoint_path):
        """Test that repeated loads return the cached network."""
        handle = ModelHandle(str(checkpoint_path))
        assert not handle.is_loaded()
        assert handle.load() is handle.load()

    def test_request_validation(self):
        """Test that an empty request is invalid."""
        with pytest.raises(ValidationError):
            PredictRequest()


class TestTopK:
    """Test probability ranking."""

    def test_order_and_ties(self, checkpoint_path):
        """Test most probable first, ties by class index."""
        net = ModelHandle(str(checkpoint_path)).load()
        assert top_k(net, np.array([0.5, 0.5]), 2) == [("left", 0.5), ("right", 0.5)]
        assert top_k(net, np.array([0.2, 0.8]), 1) == [("right", 0.8)]
