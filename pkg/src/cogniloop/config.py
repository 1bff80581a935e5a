"""Session settings and the flat ``key = value`` config file.

Example::

    # EgoSchema-style run against a local server
    n_f = 5
    k_t = 3
    k_m = 5
    t_max = 3
    fps = 1.0
    chat_url = http://localhost:8000/v1/chat/completions
    chat_model = gpt-4

Backend URLs may also come from ``COGNILOOP_<ROLE>_URL`` environment
variables and API keys only ever come from ``COGNILOOP_<ROLE>_API_KEY``
(roles: CHAT, CAPTION, VQA, EMBED). Setting ``mock_script`` replaces all
four backends with a scripted mock.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from cogniloop.gateway import DEFAULT_CAPTION_PROMPT, BackendSuite
from cogniloop.tools import STRATEGIES


@dataclass(frozen=True)
class SessionConfig:
    n_f: int = 5
    k_t: int = 3
    k_m: int = 5
    t_max: int = 3
    fps: float = 1.0
    window: int = 5
    seed: int = 0
    strategy: str = "watershed"
    verification_enabled: bool = True
    reflection_enabled: bool = True
    clip_len_s: float = 1.0
    temperature: float = 0.0
    max_parse_retries: int = 2

    def __post_init__(self):
        for name in ("n_f", "k_t", "k_m", "t_max", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.window % 2 == 0:
            raise ValueError("window must be odd")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.max_parse_retries < 0:
            raise ValueError("max_parse_retries must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


ROLES = ("chat", "caption", "vqa", "embed")


@dataclass(frozen=True)
class BackendSettings:
    mock_script: str | None = None
    chat_url: str | None = None
    chat_model: str = "gpt-4"
    caption_url: str | None = None
    caption_model: str = "llava-next"
    vqa_url: str | None = None
    vqa_model: str = "llava-next"
    embed_url: str | None = None
    embed_model: str = "eva-clip-8b"
    image_transport: str = "base64"
    timeout_s: float = 120.0
    max_inflight: int = 4
    caption_prompt: str = DEFAULT_CAPTION_PROMPT


def _coerce(field_type, raw: str):
    kind = field_type if isinstance(field_type, str) else getattr(field_type, "__name__", str(field_type))
    if "bool" in kind:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw.strip()


def load_config(path: str | os.PathLike | None = None) -> tuple[SessionConfig, BackendSettings]:
    """Read a config file; missing keys keep their defaults, unknown keys are errors."""
    values: dict[str, str] = {}
    base = Path(".")
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        text = Path(path).read_text()
        parser.read_string("[cogniloop]\n" + text)
        values = dict(parser["cogniloop"])
        base = Path(path).resolve().parent

    session_fields = {f.name: f for f in dataclasses.fields(SessionConfig)}
    backend_fields = {f.name: f for f in dataclasses.fields(BackendSettings)}
    unknown = set(values) - set(session_fields) - set(backend_fields)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    session = SessionConfig(
        **{k: _coerce(session_fields[k].type, v) for k, v in values.items() if k in session_fields}
    )
    backend_kwargs = {k: _coerce(backend_fields[k].type, v) for k, v in values.items() if k in backend_fields}
    for role in ROLES:
        key = f"{role}_url"
        if not backend_kwargs.get(key):
            env = os.environ.get(f"COGNILOOP_{role.upper()}_URL")
            if env:
                backend_kwargs[key] = env
    if backend_kwargs.get("mock_script"):
        script = Path(backend_kwargs["mock_script"])
        backend_kwargs["mock_script"] = str(script if script.is_absolute() else base / script)
    return session, BackendSettings(**backend_kwargs)


def build_suite(settings: BackendSettings) -> BackendSuite:
    """Instantiate backends: the mock when a script is configured, otherwise HTTP."""
    if settings.mock_script:
        from cogniloop.mock import MockScript, mock_suite

        return mock_suite(MockScript.load(settings.mock_script), settings.caption_prompt)

    from cogniloop.remote import HttpChatBackend, HttpEmbeddingBackend, HttpVisionBackend

    missing = [r for r in ROLES if not getattr(settings, f"{r}_url")]
    if missing:
        raise ValueError(f"no endpoint configured for roles: {', '.join(missing)}")

    def common(role: str) -> dict:
        return {
            "url": getattr(settings, f"{role}_url"),
            "model": getattr(settings, f"{role}_model"),
            "api_key": os.environ.get(f"COGNILOOP_{role.upper()}_API_KEY"),
            "timeout_s": settings.timeout_s,
            "max_inflight": settings.max_inflight,
            "image_transport": settings.image_transport,
            "backend_id": f"{role}:{getattr(settings, f'{role}_model')}",
        }

    return BackendSuite(
        chat=HttpChatBackend(**common("chat")),
        captioner=HttpVisionBackend(**common("caption")),
        vqa=HttpVisionBackend(**common("vqa")),
        embedder=HttpEmbeddingBackend(**common("embed")),
        caption_prompt=settings.caption_prompt,
    )
