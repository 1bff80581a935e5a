"""HTTP backends speaking the chat-completions JSON protocol.

Captioning and VQA go through a chat-completions endpoint with an image part
attached to the user message. Embeddings use an ``/embeddings``-style
endpoint: ``{"model", "input": [...]}`` in, ``{"data": [{"index", "embedding"}]}``
out, with images passed as data URLs (``image_transport="base64"``) or
``file://`` URLs (``"path"``).
"""

from __future__ import annotations

import base64
import mimetypes
import os
import threading
from typing import Sequence

import httpx

from cogniloop.errors import ProtocolError, TransportError
from cogniloop.gateway import DEFAULT_BACKOFF_S, DEFAULT_RETRIES, ChatReply
from cogniloop.media import FrameRef


def image_url(frame: FrameRef, transport: str = "base64") -> str:
    if transport == "path":
        return "file://" + os.path.abspath(frame.image_path)
    if transport != "base64":
        raise ValueError(f"unknown image transport {transport!r}")
    mime = mimetypes.guess_type(frame.image_path)[0] or "image/jpeg"
    with open(frame.image_path, "rb") as fh:
        data = base64.b64encode(fh.read()).decode("ascii")
    return f"data:{mime};base64,{data}"


class _HttpBase:
    needs_image_files = True

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 120.0,
        max_inflight: int = 4,
        backend_id: str | None = None,
        max_retries: int = DEFAULT_RETRIES,
        retry_backoff_s: float = DEFAULT_BACKOFF_S,
        image_transport: str = "base64",
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.model = model
        self.backend_id = backend_id or f"{model}@{url}"
        self.max_retries = max_retries
        self.retry_backoff_s = retry_backoff_s
        self.image_transport = image_transport
        self._api_key = api_key
        self._timeout = timeout_s
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._client = client or httpx.Client(timeout=timeout_s)

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        with self._slots:
            try:
                resp = self._client.post(self.url, json=body, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                raise TransportError(f"{self.backend_id}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{self.backend_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{self.backend_id}: response is not JSON") from exc
        if not isinstance(data, dict):
            raise ProtocolError(f"{self.backend_id}: response is not a JSON object")
        return data

    def _chat_text(self, messages: list[dict], temperature: float) -> tuple[str, dict]:
        data = self._post({"model": self.model, "messages": messages, "temperature": temperature})
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"{self.backend_id}: missing choices[0].message.content") from exc
        if not isinstance(text, str):
            raise ProtocolError(f"{self.backend_id}: content is not text")
        return text, data.get("usage") or {}


class HttpChatBackend(_HttpBase):
    def complete(self, messages: list[dict], temperature: float) -> ChatReply:
        text, usage = self._chat_text(messages, temperature)
        return ChatReply(text, usage.get("prompt_tokens"), usage.get("completion_tokens"))


class HttpVisionBackend(_HttpBase):
    """Captioner and VQA model behind one multimodal chat endpoint."""

    def _ask(self, frame: FrameRef, text: str) -> str:
        message = {
            "role": "user",
            "content": [
                {"type": "text", "text": text},
                {"type": "image_url", "image_url": {"url": image_url(frame, self.image_transport)}},
            ],
        }
        reply, _ = self._chat_text([message], 0.0)
        return reply

    def describe(self, frame: FrameRef, prompt: str) -> str:
        return self._ask(frame, prompt)

    def answer(self, frame: FrameRef, question: str) -> str:
        return self._ask(frame, question)


class HttpEmbeddingBackend(_HttpBase):
    def _embed(self, inputs: list[str]) -> list[list[float]]:
        data = self._post({"model": self.model, "input": inputs})
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            return [list(r["embedding"]) for r in rows]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"{self.backend_id}: malformed embeddings response") from exc

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        return self._embed(list(texts))

    def embed_images(self, frames: Sequence[FrameRef]) -> list[list[float]]:
        return self._embed([image_url(f, self.image_transport) for f in frames])
