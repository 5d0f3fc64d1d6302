import time
from typing import List, Tuple

import numpy as np

from ltcnn.data import preprocess
from ltcnn.errors import enhance_error_message
from ltcnn.imaging import decode_image
from ltcnn.layers import EVAL, softmax
from ltcnn.metrics import predict_labels
from ltcnn.model_handle import ModelHandle
from ltcnn.models import InputRequest, PredictRequest, PredictResponse, SaliencyRequest, SaliencyResponse
from ltcnn.network import Network
from ltcnn.saliency import saliency_map
from ltcnn.tensor import DTYPE, Tensor


def load_input(net: Network, image_path: str) -> Tensor:
    """Decode and preprocess one image file to the network's C x H x W input."""
    return preprocess(decode_image(image_path), net.spec)


def predict_tensor(net: Network, x: Tensor) -> Tuple[int, np.ndarray]:
    """Eval-mode prediction for one C x H x W input: (argmax index, softmax probabilities)."""
    logits, _ = net.forward(np.asarray(x, dtype=DTYPE)[None], EVAL)
    probs = softmax(logits.astype(np.float64))[0]
    return int(predict_labels(logits)[0]), probs


def top_k(net: Network, probs: np.ndarray, k: int) -> List[Tuple[str, float]]:
    order = sorted(range(len(probs)), key=lambda c: (-probs[c], c))[:k]
    return [(net.spec.class_names[c], float(probs[c])) for c in order]


class Predictor:
    """Answers predict and saliency requests against the loaded checkpoint."""

    def __init__(self, handle: ModelHandle):
        self.handle = handle

    def _input(self, net: Network, request: InputRequest) -> Tensor:
        if request.tensor is not None:
            return np.asarray(request.tensor, dtype=DTYPE)
        return load_input(net, request.image_path)

    def predict(self, request: PredictRequest) -> PredictResponse:
        start_time = time.time()
        try:
            net = self.handle.load()
            index, probs = predict_tensor(net, self._input(net, request))
            return PredictResponse(
                success=True,
                class_name=net.spec.class_names[index],
                class_index=index,
                prob=float(probs[index]),
                probs=dict(top_k(net, probs, request.top_k)),
                execution_time=time.time() - start_time,
            )
        except Exception as e:
            return PredictResponse(success=False, error=enhance_error_message(str(e)),
                                   execution_time=time.time() - start_time)

    def saliency(self, request: SaliencyRequest) -> SaliencyResponse:
        start_time = time.time()
        try:
            net = self.handle.load()
            target = "auto" if request.target is None else request.target
            smap = saliency_map(net, self._input(net, request), target, source=request.image_path)
            return SaliencyResponse(
                success=True,
                shape=list(smap.values.shape),
                values=smap.values.tolist(),
                target=smap.target,
                execution_time=time.time() - start_time,
            )
        except Exception as e:
            return SaliencyResponse(success=False, error=enhance_error_message(str(e)),
                                    execution_time=time.time() - start_time)
