"""
Client/server demonstration of the deployment framework: the client protects images locally
with the public h_theta and sends only protected images; the server classifies them with psi.

Wire protocol:
    POST /classify   body: float32 TIFF (image/tiff) or 8-bit PNG (image/png)
                     200 -> {"probabilities": [...], "label": int, "model_digest": str}
                     400/413 -> {"error": reason}
    GET  /health     200 -> {"status": "ok", "model_digest": str, "num_classes": int}
"""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import requests
import torch
from flask import Flask, jsonify, request
from werkzeug.exceptions import HTTPException

from checkpoint import checkpoint_digest, load_checkpoint
from colors import info, path as path_color, stage, warning
from debug_utils import debug_print, status_print
from errors import ConfigurationError, DomainError, ProtocolError, TransportError
from image_io import PNG, TIFF, decode_float_tiff, decode_png, encode_float_tiff
from Networks.resnet import Classifier, classify
from Networks.unet import forward_transform

PathLike = Union[str, Path]


@dataclass
class ClassifyResponse:
    probabilities: List[float]
    label: int
    model_digest: str

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "ClassifyResponse":
        try:
            return cls([float(p) for p in payload["probabilities"]], int(payload["label"]),
                       str(payload["model_digest"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"malformed response: {e}") from e


def decode_payload(body: bytes, content_type: Optional[str], channels: int) -> torch.Tensor:
    """Request body -> float [C, H, W] image in [0, 1]; ProtocolError on anything else"""
    if not body:
        raise ProtocolError("empty payload")
    kind = (content_type or "").split(";")[0].strip().lower()
    decoders = {TIFF: decode_float_tiff, PNG: decode_png}
    if kind not in decoders:
        raise ProtocolError(f"unsupported content type {kind or '(none)'}; send {TIFF} or {PNG}")
    try:
        image = decoders[kind](body, channels)
    except (OSError, ValueError, SyntaxError, EOFError) as e:
        raise ProtocolError(f"malformed {kind} payload: {e}") from e
    if not torch.isfinite(image).all() or image.min() < 0 or image.max() > 1:
        raise ProtocolError("pixel values must lie in [0, 1]")
    return image


def create_app(psi: Classifier, model_digest: str, max_payload_bytes: int = 1_000_000) -> Flask:
    """Flask app serving psi; the model is only read, so requests may run concurrently"""
    psi.eval()
    app = Flask("itn-classifier")
    app.config["MAX_CONTENT_LENGTH"] = max_payload_bytes

    @app.errorhandler(ProtocolError)
    def protocol_error(e: ProtocolError):
        debug_print(f"server: rejected request ({e.status}): {e.reason}", warning)
        return jsonify({"error": e.reason}), e.status

    @app.errorhandler(HTTPException)
    def http_error(e: HTTPException):
        return jsonify({"error": e.description or e.name}), e.code

    @app.get("/health")
    def health():
        return jsonify({"status": "ok", "model_digest": model_digest, "num_classes": psi.num_classes})

    @app.post("/classify")
    def classify_request():
        if request.content_length is not None and request.content_length > max_payload_bytes:
            raise ProtocolError(f"payload of {request.content_length} bytes exceeds {max_payload_bytes}", 413)
        body = request.get_data(cache=False)
        if len(body) > max_payload_bytes:
            raise ProtocolError(f"payload of {len(body)} bytes exceeds {max_payload_bytes}", 413)
        image = decode_payload(body, request.content_type, psi.in_channels)
        try:
            probabilities = classify(psi, image.unsqueeze(0))[0]
        except DomainError as e:
            raise ProtocolError(str(e)) from e
        return jsonify({
            "probabilities": [float(p) for p in probabilities],
            "label": int(torch.argmax(probabilities)),
            "model_digest": model_digest,
        })

    return app


def serve_classifier(checkpoint_path: PathLike, host: str = "127.0.0.1", port: int = 8080,
                     max_payload_bytes: int = 1_000_000) -> None:
    """Load psi and serve it until interrupted"""
    psi, _ = load_checkpoint(checkpoint_path)
    if not isinstance(psi, Classifier):
        raise ConfigurationError(f"{checkpoint_path} holds a {psi.arch_id}, not a classifier", key="checkpoint")
    digest = checkpoint_digest(checkpoint_path)
    app = create_app(psi, digest, max_payload_bytes)
    status_print(f"{stage('serve')} {psi.arch_id} ({psi.num_classes} classes, digest {digest[:12]}) "
                 f"on {path_color(f'http://{host}:{port}')}")
    app.run(host=host, port=port, threaded=True)


class ClassifierClient:
    """requests-based client with linear backoff between attempts"""

    def __init__(self, base_url: str, retries: int = 3, timeout: float = 30.0, retry_delay: float = 1.0,
                 session: Optional[requests.Session] = None, sleep: Callable[[float], None] = time.sleep):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.timeout = timeout
        self.retry_delay = retry_delay
        self.session = session or requests.Session()
        self.session.headers.update({"User-Agent": "itn-protect-client"})
        self._sleep = sleep

    def _request(self, method: str, route: str, **kwargs) -> Dict[str, Any]:
        url = f"{self.base_url}{route}"
        for attempt in range(self.retries):
            try:
                debug_print(f"client: attempt {attempt + 1}/{self.retries} - {method} {url}", info)
                response = self.session.request(method, url, timeout=self.timeout, **kwargs)
                debug_print(f"client: response status {response.status_code}", info)
                if 400 <= response.status_code < 500:
                    raise ProtocolError(self._reason(response), response.status_code)
                response.raise_for_status()
                return response.json()
            except requests.exceptions.JSONDecodeError as e:
                raise ProtocolError(f"server sent a non-JSON response: {e}") from e
            except requests.exceptions.Timeout as e:
                debug_print(f"client: timeout on attempt {attempt + 1}: {e}", warning)
            except requests.exceptions.HTTPError as e:
                debug_print(f"client: HTTP error {e.response.status_code}: {e}", warning)
            except requests.RequestException as e:
                debug_print(f"client: request error on attempt {attempt + 1}: {e}", warning)
            if attempt < self.retries - 1:
                self._sleep(self.retry_delay * (attempt + 1))
        raise TransportError(f"cannot reach {url}", self.retries)

    @staticmethod
    def _reason(response) -> str:
        try:
            return str(response.json().get("error", response.status_code))
        except ValueError:
            return f"HTTP {response.status_code}"

    def health(self) -> Dict[str, Any]:
        return self._request("GET", "/health")

    def classify_image(self, protected: torch.Tensor) -> ClassifyResponse:
        """Submit one protected [C, H, W] image as a float TIFF"""
        body = encode_float_tiff(protected)
        payload = self._request("POST", "/classify", data=body, headers={"Content-Type": TIFF})
        return ClassifyResponse.from_json(payload)


def client_protect_and_submit(h: torch.nn.Module, images: torch.Tensor,
                              client: Union[ClassifierClient, str]) -> List[ClassifyResponse]:
    """
    Protect images locally with h and submit only the protected versions, one request each,
    returning the responses in input order. images is [C, H, W] or [m, C, H, W].
    """
    if isinstance(client, str):
        client = ClassifierClient(client)
    batch = images.unsqueeze(0) if images.dim() == 3 else images
    protected = forward_transform(h, batch)
    responses = []
    for i, image in enumerate(protected):
        responses.append(client.classify_image(image))
        debug_print(f"client: image {i} -> label {responses[-1].label}")
    return responses
