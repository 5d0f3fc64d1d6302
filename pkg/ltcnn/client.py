import os
import subprocess
import sys
import time
from typing import Any, Dict, Optional

import httpx

from ltcnn.config import DEFAULT_HOST, DEFAULT_PORT

DAEMON_URL = f"http://{DEFAULT_HOST}:{DEFAULT_PORT}"
DAEMON_APP = "ltcnn.server:app"


class DaemonClient:
    """Client for the inference daemon; starts it on first use."""

    def __init__(self, base_url: str = DAEMON_URL, checkpoint: Optional[str] = None):
        self.base_url = base_url
        self.checkpoint = checkpoint

    def _host_port(self):
        address = httpx.URL(self.base_url)
        return address.host, address.port or DEFAULT_PORT

    def is_running(self) -> bool:
        try:
            response = httpx.get(f"{self.base_url}/health", timeout=1.0)
            return response.status_code == 200
        except (httpx.ConnectError, httpx.TimeoutException):
            return False

    def start_daemon(self) -> bool:
        """Start `uvicorn ltcnn.server:app` in the background unless it already answers."""
        if self.is_running():
            return True

        package_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        env = dict(os.environ)
        if self.checkpoint:
            env["LTCNN_CHECKPOINT"] = os.path.abspath(self.checkpoint)
        host, port = self._host_port()
        subprocess.Popen(
            [sys.executable, "-m", "uvicorn", DAEMON_APP, "--host", host, "--port", str(port)],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            cwd=package_root,
            env=env,
        )

        # wait up to 5 seconds
        for _ in range(50):
            time.sleep(0.1)
            if self.is_running():
                return True
        return False

    def health(self) -> Dict[str, Any]:
        if not self.start_daemon():
            return {"status": "unavailable", "error": "Failed to start daemon"}
        try:
            return httpx.get(f"{self.base_url}/health", timeout=5.0).json()
        except Exception as e:
            return {"status": "error", "error": str(e)}

    def predict(self, image_path: str, top_k: int = 1) -> Dict[str, Any]:
        if not self.start_daemon():
            return {"success": False, "error": "Failed to start daemon"}
        try:
            response = httpx.post(
                f"{self.base_url}/predict",
                json={"image_path": os.path.abspath(image_path), "top_k": top_k},
                timeout=60.0,
            )
            return response.json()
        except httpx.TimeoutException:
            return {"success": False, "error": "Prediction timeout (exceeded 60 seconds)"}
        except Exception as e:
            return {"success": False, "error": str(e)}

    def saliency(self, image_path: str, target: Optional[str] = None) -> Dict[str, Any]:
        if not self.start_daemon():
            return {"success": False, "error": "Failed to start daemon"}
        try:
            response = httpx.post(
                f"{self.base_url}/saliency",
                json={"image_path": os.path.abspath(image_path), "target": target},
                timeout=60.0,
            )
            return response.json()
        except Exception as e:
            return {"success": False, "error": str(e)}

    def reload(self) -> Dict[str, Any]:
        if not self.start_daemon():
            return {"success": False, "error": "Failed to start daemon"}
        try:
            return httpx.post(f"{self.base_url}/reload", timeout=60.0).json()
        except Exception as e:
            return {"success": False, "error": str(e)}

    def stop_daemon(self) -> Dict[str, Any]:
        """Ask the daemon to shut down."""
        if not self.is_running():
            return {"status": "not_running", "message": "Daemon is not running"}
        try:
            return httpx.post(f"{self.base_url}/shutdown", timeout=5.0).json()
        except Exception as e:
            return {"status": "error", "error": str(e)}
