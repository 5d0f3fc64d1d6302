import threading
from pathlib import Path
from typing import Optional

from ltcnn.checkpoint import load_checkpoint
from ltcnn.config import get_settings
from ltcnn.errors import ConfigError
from ltcnn.logs import get_logger
from ltcnn.network import Network

log = get_logger(__name__)


class ModelHandle:
    """Holds one loaded checkpoint for the daemon's lifetime."""

    def __init__(self, path: Optional[str] = None):
        self.path = path if path is not None else get_settings().checkpoint
        self._network: Optional[Network] = None
        self._lock = threading.Lock()
        self._validate_config()

    def _validate_config(self):
        """A checkpoint path must be configured."""
        if not self.path:
            raise ConfigError("no checkpoint configured: set LTCNN_CHECKPOINT or pass --checkpoint")

    def load(self) -> Network:
        """Load the checkpoint unless it is already in memory."""
        with self._lock:
            if self._network is None:
                self._network = load_checkpoint(Path(self.path))
                log.info("model_loaded", path=self.path, classes=self._network.spec.n_classes)
            return self._network

    def reload(self) -> Network:
        """Drop the in-memory network and read the file again."""
        with self._lock:
            self._network = None
        return self.load()

    def is_loaded(self) -> bool:
        return self._network is not None

    @property
    def network(self) -> Optional[Network]:
        return self._network
