"""Uniform text-generation interface with budget accounting and a run log.

Three interchangeable backends:

* ``HttpBackend`` — one configurable JSON endpoint (URL, bearer token env
  var, JSON paths for the prompt and completion fields) instead of
  per-vendor clients.
* ``ReplayBackend`` — content-addressed store keyed by the request cache
  key; strict mode errors on a miss, permissive mode falls through to an
  inner backend and writes the result back.
* ``ScriptedBackend`` — deterministic test oracle driven by the request's
  routing tag (purpose, problem id, in-context pair ids).

Every backend call consumes exactly one unit of budget and appends one
GenerationRecord to the run log, so the log length always equals
``budget.used``.  Identical requests share a cache key by design: a replay
of N same-prompt samples collapses to one stored response.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .storage import canonical_json, sha256_text

logger = logging.getLogger(__name__)

BACKEND_HTTP = "http"
BACKEND_REPLAY = "replay"
BACKEND_SCRIPTED = "scripted"

PURPOSE_GUESS = "guess"
PURPOSE_PHASE1 = "phase1"
PURPOSE_REPAIR = "repair"
PURPOSE_FEEDBACK = "feedback"


class BudgetExhaustedError(RuntimeError):
    """The call budget is spent; no generation was attempted."""


class TransportError(RuntimeError):
    """The HTTP backend failed after its configured retries."""


class ReplayMissError(RuntimeError):
    """Strict replay had no stored response for this request."""


class CacheKeyCollisionError(RuntimeError):
    """Two distinct prompts hashed to the same cache key within one run."""


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 1.0
    max_tokens: int = 2048
    stop_sequences: tuple[str, ...] = ()
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


def cache_key(request: GenerationRequest) -> str:
    """Digest of the response-determining request fields (the tag is excluded)."""
    payload = canonical_json(
        {
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop_sequences": list(request.stop_sequences),
        }
    )
    return sha256_text(payload)


@dataclass(frozen=True)
class GenerationRecord:
    request: GenerationRequest
    response_text: str
    backend: str
    cache_key: str
    call_index: int

    def to_record(self) -> dict:
        return {
            "call_index": self.call_index,
            "backend": self.backend,
            "cache_key": self.cache_key,
            "response_text": self.response_text,
            "request": {
                "prompt": self.request.prompt,
                "temperature": self.request.temperature,
                "max_tokens": self.request.max_tokens,
                "stop_sequences": list(self.request.stop_sequences),
                "tag": self.request.tag,
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "GenerationRecord":
        req = record["request"]
        return cls(
            request=GenerationRequest(
                prompt=req["prompt"],
                temperature=req["temperature"],
                max_tokens=req["max_tokens"],
                stop_sequences=tuple(req["stop_sequences"]),
                tag=req.get("tag", ""),
            ),
            response_text=record["response_text"],
            backend=record["backend"],
            cache_key=record["cache_key"],
            call_index=record["call_index"],
        )


@dataclass
class Budget:
    limit: int
    used: int = 0

    def __post_init__(self) -> None:
        if self.limit <= 0:
            raise ValueError("budget limit must be positive")
        if not 0 <= self.used <= self.limit:
            raise ValueError("budget used must lie in [0, limit]")

    @property
    def remaining(self) -> int:
        return self.limit - self.used


# --- Routing tags -------------------------------------------------------------

_TAG_FIELD_SEP = ";"
_TAG_LIST_SEP = ","


@dataclass(frozen=True)
class TagInfo:
    purpose: str = ""
    problem_id: str | None = None
    pair_ids: tuple[str, ...] = ()

    @property
    def pair_problem_ids(self) -> tuple[str, ...]:
        """Source problems of the in-context pairs (pair ids are '<problem>/c<call>')."""
        return tuple(pid.rsplit("/", 1)[0] for pid in self.pair_ids)


def format_tag(purpose: str, problem_id: str | None = None, pair_ids: Sequence[str] = ()) -> str:
    """Encode routing metadata in the free-form request tag.

    Problem and pair ids must not contain ';' or ','.  The tag never enters
    the cache key, so routing metadata cannot perturb replay.
    """
    parts = [f"purpose={purpose}"]
    if problem_id is not None:
        parts.append(f"problem={problem_id}")
    if pair_ids:
        parts.append(f"pairs={_TAG_LIST_SEP.join(pair_ids)}")
    return _TAG_FIELD_SEP.join(parts)


def parse_tag(tag: str) -> TagInfo:
    fields: dict[str, str] = {}
    for part in tag.split(_TAG_FIELD_SEP):
        if "=" in part:
            key, value = part.split("=", 1)
            fields[key] = value
    pair_ids = tuple(p for p in fields.get("pairs", "").split(_TAG_LIST_SEP) if p)
    return TagInfo(purpose=fields.get("purpose", ""), problem_id=fields.get("problem"), pair_ids=pair_ids)


# --- Backends ------------------------------------------------------------------


class Backend(Protocol):
    name: str

    def complete(self, request: GenerationRequest) -> str: ...


class ScriptedBackend:
    """Deterministic oracle backend for desk-scale runs and tests."""

    name = BACKEND_SCRIPTED

    def __init__(self, handler: Callable[[TagInfo, GenerationRequest], str]):
        self._handler = handler

    def complete(self, request: GenerationRequest) -> str:
        return self._handler(parse_tag(request.tag), request)


@dataclass(frozen=True)
class OracleRule:
    """One scripted-oracle rule; unset fields match anything.

    ``pair_ids`` matches the in-context pair ids exactly (order-sensitive);
    ``pair_problem_ids`` matches when any in-context pair originates from one
    of the listed problems.
    """

    response: str
    purpose: str | None = None
    problem_id: str | None = None
    pair_ids: tuple[str, ...] | None = None
    pair_problem_ids: tuple[str, ...] | None = None

    def matches(self, info: TagInfo) -> bool:
        if self.purpose is not None and info.purpose != self.purpose:
            return False
        if self.problem_id is not None and info.problem_id != self.problem_id:
            return False
        if self.pair_ids is not None and info.pair_ids != self.pair_ids:
            return False
        if self.pair_problem_ids is not None and not set(self.pair_problem_ids) & set(
            info.pair_problem_ids
        ):
            return False
        return True


class ScriptedOracle:
    """First-match ruleset with a default response for unmatched requests."""

    def __init__(
        self,
        rules: Sequence[OracleRule],
        default: str = "",
        known_problem_ids: Iterable[str] | None = None,
    ):
        if known_problem_ids is not None:
            known = set(known_problem_ids)
            for rule in rules:
                referenced = set()
                if rule.problem_id is not None:
                    referenced.add(rule.problem_id)
                if rule.pair_problem_ids is not None:
                    referenced.update(rule.pair_problem_ids)
                unknown = referenced - known
                if unknown:
                    raise ValueError(f"oracle rule references unknown problem ids: {sorted(unknown)}")
        self.rules = list(rules)
        self.default = default

    def __call__(self, info: TagInfo, request: GenerationRequest) -> str:
        for rule in self.rules:
            if rule.matches(info):
                return rule.response
        return self.default

    @classmethod
    def from_json_file(
        cls, path: str | Path, known_problem_ids: Iterable[str] | None = None
    ) -> "ScriptedOracle":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        rules = [
            OracleRule(
                response=r["response"],
                purpose=r.get("purpose"),
                problem_id=r.get("problem_id"),
                pair_ids=tuple(r["pair_ids"]) if r.get("pair_ids") is not None else None,
                pair_problem_ids=(
                    tuple(r["pair_problem_ids"]) if r.get("pair_problem_ids") is not None else None
                ),
            )
            for r in payload.get("rules", [])
        ]
        return cls(rules, default=payload.get("default", ""), known_problem_ids=known_problem_ids)


def scripted_oracle(
    rules: Sequence[OracleRule],
    default: str = "",
    known_problem_ids: Iterable[str] | None = None,
) -> ScriptedBackend:
    """Build a scripted backend from a validated ruleset."""
    return ScriptedBackend(ScriptedOracle(rules, default, known_problem_ids))


class ReplayStore:
    """Content-addressed response store, one JSON file per cache key."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)["response_text"]

    def put(self, key: str, response_text: str, prompt_sha256: str = "") -> None:
        payload = {"cache_key": key, "prompt_sha256": prompt_sha256, "response_text": response_text}
        self._path(key).write_text(canonical_json(payload) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


def build_replay_store(log_path: str | Path, store_dir: str | Path) -> ReplayStore:
    """Populate a replay store from a prior run log."""
    store = ReplayStore(store_dir)
    for record in load_run_log(log_path):
        store.put(record.cache_key, record.response_text, sha256_text(record.request.prompt))
    return store


class ReplayBackend:
    """Serves stored responses; never performs network I/O on a hit."""

    name = BACKEND_REPLAY

    def __init__(self, store: ReplayStore, strict: bool = True, fallback: Backend | None = None):
        self.store = store
        self.strict = strict
        self.fallback = fallback

    def complete(self, request: GenerationRequest) -> str:
        key = cache_key(request)
        hit = self.store.get(key)
        if hit is not None:
            return hit
        if self.strict or self.fallback is None:
            raise ReplayMissError(f"no stored response for cache key {key}")
        response = self.fallback.complete(request)
        self.store.put(key, response, sha256_text(request.prompt))
        return response


@dataclass(frozen=True)
class HttpEndpointConfig:
    """Single JSON endpoint description; field locations are dotted paths."""

    url: str
    prompt_path: str = "prompt"
    completion_path: str = "completion"
    token_env: str | None = None
    temperature_path: str | None = "temperature"
    max_tokens_path: str | None = "max_tokens"
    stop_path: str | None = None
    request_template: dict = field(default_factory=dict)
    timeout_s: float = 60.0
    retries: int = 3
    backoff_s: float = 0.5


def _set_path(obj: dict, dotted: str, value: object) -> None:
    parts = dotted.split(".")
    node = obj
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _get_path(obj: object, dotted: str) -> object:
    node = obj
    for part in dotted.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise KeyError(dotted)
    return node


class HttpBackend:
    """Talks to one configurable JSON completion endpoint with retries."""

    name = BACKEND_HTTP

    def __init__(self, config: HttpEndpointConfig, session=None):
        import requests

        self.config = config
        self._session = session or requests.Session()

    def _build_body(self, request: GenerationRequest) -> dict:
        body = json.loads(json.dumps(self.config.request_template))
        _set_path(body, self.config.prompt_path, request.prompt)
        if self.config.temperature_path:
            _set_path(body, self.config.temperature_path, request.temperature)
        if self.config.max_tokens_path:
            _set_path(body, self.config.max_tokens_path, request.max_tokens)
        if self.config.stop_path and request.stop_sequences:
            _set_path(body, self.config.stop_path, list(request.stop_sequences))
        return body

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.token_env:
            token = os.environ.get(self.config.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: GenerationRequest) -> str:
        import requests

        body = self._build_body(request)
        headers = self._headers()
        last_error: Exception | None = None
        for attempt in range(self.config.retries):
            if attempt:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    self.config.url, json=body, headers=headers, timeout=self.config.timeout_s
                )
                response.raise_for_status()
                completion = _get_path(response.json(), self.config.completion_path)
                if not isinstance(completion, str):
                    raise TransportError(
                        f"completion at {self.config.completion_path!r} is not text"
                    )
                return completion
            except TransportError as exc:
                last_error = exc
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                logger.warning("http backend attempt %d failed: %s", attempt + 1, exc)
        raise TransportError(f"endpoint failed after {self.config.retries} attempts: {last_error}")


# --- Gateway -------------------------------------------------------------------


class Gateway:
    """Serializes budget accounting and run-log appends around any backend.

    Concurrent ``generate`` calls are allowed; the budget reservation and the
    log append happen under one lock while the backend call itself runs
    outside it.  A transport failure after retries still consumes budget and
    is recorded with an empty response (scored 0 downstream); other backend
    errors roll the reservation back so the log always matches the budget.
    """

    def __init__(
        self,
        backend: Backend,
        budget: Budget,
        run_log_path: str | Path | None = None,
        start_index: int = 0,
        max_concurrency: int | None = None,
    ):
        self.backend = backend
        self.budget = budget
        self.records: list[GenerationRecord] = []
        self._lock = threading.Lock()
        self._slots = threading.Semaphore(max_concurrency) if max_concurrency else None
        self._next_index = start_index
        self._prompt_digests: dict[str, str] = {}
        self._log_fh = None
        if run_log_path is not None:
            path = Path(run_log_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._log_fh = open(path, "a", encoding="utf-8")

    def generate(self, request: GenerationRequest) -> GenerationRecord:
        if self._slots is not None:
            with self._slots:
                return self._generate(request)
        return self._generate(request)

    def _generate(self, request: GenerationRequest) -> GenerationRecord:
        key = cache_key(request)
        prompt_sha = sha256_text(request.prompt)
        with self._lock:
            if self.budget.used >= self.budget.limit:
                raise BudgetExhaustedError(
                    f"budget of {self.budget.limit} calls exhausted (tag={request.tag!r})"
                )
            known = self._prompt_digests.get(key)
            if known is not None and known != prompt_sha:
                raise CacheKeyCollisionError(f"cache key {key} maps to two distinct prompts")
            self._prompt_digests[key] = prompt_sha
            self.budget.used += 1
            call_index = self._next_index
            self._next_index += 1

        try:
            response_text = self.backend.complete(request)
        except TransportError as exc:
            logger.warning("call %d: transport failure, recording empty response: %s", call_index, exc)
            response_text = ""
        except BaseException:
            with self._lock:
                self.budget.used -= 1
            raise

        record = GenerationRecord(
            request=request,
            response_text=response_text,
            backend=self.backend.name,
            cache_key=key,
            call_index=call_index,
        )
        with self._lock:
            self.records.append(record)
            if self._log_fh is not None:
                self._log_fh.write(canonical_json(record.to_record()) + "\n")
                self._log_fh.flush()
        return record

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def __enter__(self) -> "Gateway":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def load_run_log(path: str | Path) -> list[GenerationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(GenerationRecord.from_record(json.loads(line)))
    return records
