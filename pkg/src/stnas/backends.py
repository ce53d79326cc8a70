"""Chat backends: an OpenAI-compatible HTTP client and a scripted stand-in."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np
import requests

from .arch import LAYER_KEYS, ArchSpec, enumerate_space
from .prompts import serialize_arch
from .st_ops import CELL_KINDS

log = logging.getLogger(__name__)

# what the caller expects back; the HTTP backend ignores it
EXPECT_ARCH = "arch"
EXPECT_LAYER = "layer"
EXPECT_JUDGMENT = "judgment"


class BackendError(RuntimeError):
    def __init__(self, msg: str, status: int | None = None):
        super().__init__(msg)
        self.status = status


class ScriptError(ValueError):
    """A scripted policy file is malformed."""


class PolicyBackend:
    """Interface: turn a (system, user) prompt pair into reply text."""

    def chat(self, system: str, user: str, expect: str = EXPECT_ARCH) -> str:
        raise NotImplementedError


@dataclass
class RemoteBackend(PolicyBackend):
    base_url: str
    model: str
    api_key_env: str = "LLM_API_KEY"
    temperature: float = 0.7
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0  # seconds before the second attempt, doubled after

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        self._session = requests.Session()

    def chat(self, system: str, user: str, expect: str = EXPECT_ARCH) -> str:
        url = self.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.model,
            "messages": [{"role": "system", "content": system},
                         {"role": "user", "content": user}],
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        status, detail = None, ""
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                status, detail = None, str(exc)
                log.warning("chat attempt %d/%d failed: %s", attempt + 1, self.max_retries, exc)
                continue
            status = resp.status_code
            if not 200 <= status < 300:
                detail = resp.text[:200]
                log.warning("chat attempt %d/%d: HTTP %d", attempt + 1, self.max_retries, status)
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise BackendError("reply is not a chat-completion object", status) from None
        raise BackendError(f"chat failed after {self.max_retries} attempts: {detail}", status)


def _arch_from_answer(ans) -> ArchSpec | None:
    if isinstance(ans, dict):
        combo = ans.get("Combination of modules", ans)
        if isinstance(combo, dict) and all(k in combo for k in LAYER_KEYS):
            return ArchSpec.from_dict(combo)
    return None


class ScriptedBackend(PolicyBackend):
    """Replays a fixed answer list in order.

    COT answers are architecture objects; TOT answers are
    ``{"layer": name, "judgment": "possible"|"impossible"}`` entries, whose
    layer half answers one generate request and whose judgment half answers
    the following evaluate request. A bare string is returned verbatim. Once
    the script runs out, a seeded random valid answer is produced.
    """

    def __init__(self, answers=(), mode: str = "cot", seed: int = 0):
        if mode not in ("cot", "tot"):
            raise ScriptError(f"mode must be cot or tot, got {mode!r}")
        self.mode = mode
        self.answers = list(answers)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.pos = 0
        self._pending_judgment = None
        self.exhausted_calls = 0

    @classmethod
    def from_file(cls, path, seed: int = 0) -> "ScriptedBackend":
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"{path}: invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict) or "answers" not in obj:
            raise ScriptError(f'{path}: expected {{"mode", "answers"}}')
        if not isinstance(obj["answers"], list):
            raise ScriptError(f"{path}: answers must be a list")
        return cls(obj["answers"], mode=obj.get("mode", "cot"), seed=seed)

    def _next(self):
        if self.pos < len(self.answers):
            ans = self.answers[self.pos]
            self.pos += 1
            return ans
        return None

    def _fallback(self, expect: str) -> str:
        self.exhausted_calls += 1
        log.warning("scripted policy exhausted, answering at random")
        if expect == EXPECT_JUDGMENT:
            return json.dumps({"Judgment": "possible", "Explanation": "scripted fallback"})
        if expect == EXPECT_LAYER:
            kind = CELL_KINDS[int(self.rng.integers(len(CELL_KINDS)))]
            return json.dumps({"New layer": kind.value, "Explanation": "scripted fallback"})
        space = enumerate_space()
        return serialize_arch(space[int(self.rng.integers(len(space)))], "scripted fallback")

    def chat(self, system: str, user: str, expect: str = EXPECT_ARCH) -> str:
        if expect == EXPECT_JUDGMENT and self._pending_judgment is not None:
            verdict, self._pending_judgment = self._pending_judgment, None
            return json.dumps({"Judgment": verdict, "Explanation": "scripted"})
        self._pending_judgment = None
        ans = self._next()
        if ans is None:
            return self._fallback(expect)
        if isinstance(ans, str):
            return ans
        spec = _arch_from_answer(ans)
        if spec is not None:
            return serialize_arch(spec, "scripted")
        if isinstance(ans, dict) and "layer" in ans:
            self._pending_judgment = ans.get("judgment", "possible")
            return json.dumps({"New layer": ans["layer"], "Explanation": "scripted"})
        if isinstance(ans, dict) and "judgment" in ans:
            return json.dumps({"Judgment": ans["judgment"], "Explanation": "scripted"})
        return json.dumps(ans)
