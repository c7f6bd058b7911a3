"""Model providers: text completion, sentence embedding and continuation log-likelihood.

Each capability has a remote implementation that talks JSON over HTTP (with a
persistent on-disk response cache) and a deterministic offline fixture used in
tests and for the bundled synthetic corpus.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import threading
import time
import zlib
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Protocol

import httpx
import numpy as np

from .errors import InvalidInputError, MissingFixtureError, ProviderError, TransportError
from .jsonio import read_json

log = logging.getLogger(__name__)

TRIGRAM_BUCKETS = 256
BOS, EOS, UNK = "<s>", "</s>", "<unk>"
_PUNCT = re.compile(r"[^\w\s]")
_TOKEN = re.compile(r"\w+")


@dataclass(frozen=True)
class Prompt:
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise InvalidInputError("prompt must be a non-empty string")

    def __str__(self) -> str:
        return self.text


def as_prompt(prompt: Prompt | str) -> Prompt:
    return prompt if isinstance(prompt, Prompt) else Prompt(prompt)


def prompt_hash(prompt: Prompt | str) -> str:
    """Key under which fixture files store the completion for ``prompt``."""
    return hashlib.sha256(as_prompt(prompt).text.encode("utf-8")).hexdigest()


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def request_key(request: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(dict(request))).hexdigest()


class CompletionProvider(Protocol):
    def complete(self, prompt: Prompt | str) -> str: ...


class Embedder(Protocol):
    def embed(self, sentence: str) -> np.ndarray: ...


class LikelihoodScorer(Protocol):
    def score_loglik(self, prompt: Prompt | str, continuation: str) -> float: ...


@dataclass
class ProviderConfig:
    kind: str = "fixture"
    endpoint: str | None = None
    embed_endpoint: str | None = None
    score_endpoint: str | None = None
    model: str = "text-davinci-003"
    api_key_env: str = "TASKGRAPH_API_KEY"
    cache_dir: Path | None = None
    max_parallel: int = 4
    retry_limit: int = 3
    max_tokens: int = 256
    timeout: float = 60.0
    fixtures_path: Path | None = None
    corpus_path: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "fixture"):
            raise InvalidInputError(f"unknown provider kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise InvalidInputError("remote provider requires an endpoint")
        if self.max_parallel < 1:
            raise InvalidInputError("max_parallel must be >= 1")
        if self.retry_limit < 0:
            raise InvalidInputError("retry_limit must be >= 0")
        for name in ("cache_dir", "fixtures_path", "corpus_path"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, Path):
                setattr(self, name, Path(value))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ProviderConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown provider settings: {sorted(unknown)}")
        return cls(**data)


class ResponseCache:
    """One file per request key; writers go through temp-file-then-rename."""

    def __init__(self, directory: Path | str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.directory / key

    def get(self, key: str) -> bytes | None:
        try:
            return self.path_for(key).read_bytes()
        except FileNotFoundError:
            return None

    def put(self, key: str, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.path_for(key))
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


class RemoteClient:
    """JSON-over-HTTP transport shared by the remote providers.

    ``calls`` counts attempted network requests; cache hits never touch it.
    """

    def __init__(
        self,
        config: ProviderConfig,
        *,
        client: httpx.Client | None = None,
        cache: ResponseCache | None = None,
        backoff: float = 0.5,
    ):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        if cache is None and config.cache_dir is not None:
            cache = ResponseCache(config.cache_dir)
        self.cache = cache
        self.backoff = backoff
        self.calls = 0
        self._lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        token = os.environ.get(self.config.api_key_env)
        if not token:
            raise TransportError(f"environment variable {self.config.api_key_env} is not set")
        return {"Authorization": f"Bearer {token}"}

    def request(self, kind: str, url: str, body: dict[str, Any], parse: Callable[[bytes], Any]) -> Any:
        key = request_key({"kind": kind, **body})
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return parse(cached)
        raw = self._post(url, body)
        value = parse(raw)
        if self.cache is not None:
            self.cache.put(key, raw)
        return value

    def _post(self, url: str, body: dict[str, Any]) -> bytes:
        headers = self._headers()
        attempts = self.config.retry_limit + 1
        last: str = ""
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.calls += 1
            try:
                resp = self.client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise TransportError(f"authentication failed ({resp.status_code}) at {url}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            return resp.content
        raise TransportError(f"request to {url} failed after {attempts} attempts ({last})")


def _load_json(raw: bytes) -> Any:
    try:
        return json.loads(raw)
    except ValueError as exc:
        raise ProviderError(f"malformed provider response: {exc}") from exc


def _parse_completion(raw: bytes) -> str:
    data = _load_json(raw)
    if isinstance(data, dict):
        if isinstance(data.get("text"), str):
            return data["text"]
        choices = data.get("choices")
        if choices and isinstance(choices[0], dict) and isinstance(choices[0].get("text"), str):
            return choices[0]["text"]
    raise ProviderError("completion response has neither 'text' nor 'choices[0].text'")


def _parse_embedding(raw: bytes) -> list[float]:
    data = _load_json(raw)
    if isinstance(data, dict):
        if "embedding" in data:
            return data["embedding"]
        items = data.get("data")
        if items and isinstance(items[0], dict) and "embedding" in items[0]:
            return items[0]["embedding"]
    raise ProviderError("embedding response has no 'embedding' field")


def _parse_logprob(raw: bytes) -> float:
    data = _load_json(raw)
    if isinstance(data, dict) and isinstance(data.get("logprob"), (int, float)):
        return float(data["logprob"])
    raise ProviderError("scoring response has no numeric 'logprob' field")


def normalize(vector: Iterable[float]) -> np.ndarray:
    try:
        v = np.asarray(vector, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"embedding is not numeric: {exc}") from exc
    norm = float(np.linalg.norm(v))
    if v.ndim != 1 or v.size == 0 or not math.isfinite(norm) or norm == 0.0:
        raise InvalidInputError("embedding must be a non-zero finite vector")
    return v / norm


class RemoteCompletionProvider:
    def __init__(self, config: ProviderConfig, transport: RemoteClient | None = None):
        self.config = config
        self.transport = transport or RemoteClient(config)

    def complete(self, prompt: Prompt | str) -> str:
        prompt = as_prompt(prompt)
        body = {
            "model": self.config.model,
            "prompt": prompt.text,
            "max_tokens": self.config.max_tokens,
            "temperature": 0,
        }
        return self.transport.request("complete", self.config.endpoint, body, _parse_completion)


class RemoteEmbedder:
    def __init__(self, config: ProviderConfig, transport: RemoteClient | None = None):
        if not config.embed_endpoint:
            raise InvalidInputError("remote embedder requires embed_endpoint")
        self.config = config
        self.transport = transport or RemoteClient(config)
        self.dimension: int | None = None

    def embed(self, sentence: str) -> np.ndarray:
        if not sentence or not sentence.strip():
            raise InvalidInputError("cannot embed an empty sentence")
        body = {"model": self.config.model, "input": sentence}
        vec = normalize(self.transport.request("embed", self.config.embed_endpoint, body, _parse_embedding))
        if self.dimension is None:
            self.dimension = vec.size
        elif vec.size != self.dimension:
            raise InvalidInputError(f"embedding dimension changed from {self.dimension} to {vec.size}")
        return vec


class RemoteScorer:
    def __init__(self, config: ProviderConfig, transport: RemoteClient | None = None):
        if not config.score_endpoint:
            raise InvalidInputError("remote scorer requires score_endpoint")
        self.config = config
        self.transport = transport or RemoteClient(config)

    def score_loglik(self, prompt: Prompt | str, continuation: str) -> float:
        if not continuation or not continuation.strip():
            raise InvalidInputError("continuation must be non-empty")
        body = {"model": self.config.model, "prompt": as_prompt(prompt).text, "continuation": continuation}
        value = self.transport.request("score", self.config.score_endpoint, body, _parse_logprob)
        if not math.isfinite(value):
            raise ProviderError(f"non-finite log-likelihood {value}")
        return value


@dataclass(frozen=True)
class FixtureCompletionProvider:
    """Replays recorded completions keyed by ``prompt_hash``."""

    recordings: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: Path | str) -> FixtureCompletionProvider:
        data = read_json(path)
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise InvalidInputError(f"{path}: fixture file must map prompt hashes to strings")
        return cls(data)

    def complete(self, prompt: Prompt | str) -> str:
        key = prompt_hash(prompt)
        try:
            return self.recordings[key]
        except KeyError:
            raise MissingFixtureError(key) from None


def normalize_for_trigrams(sentence: str) -> str:
    return " ".join(_PUNCT.sub("", sentence.lower()).split())


def char_trigrams(text: str) -> list[str]:
    if len(text) < 3:
        return [text] if text else []
    return [text[i : i + 3] for i in range(len(text) - 2)]


class TrigramEmbedder:
    """Character-trigram counts hashed (CRC-32) into fixed buckets, L2-normalized."""

    def __init__(self, buckets: int = TRIGRAM_BUCKETS):
        self.dimension = buckets

    def embed(self, sentence: str) -> np.ndarray:
        if not sentence or not sentence.strip():
            raise InvalidInputError("cannot embed an empty sentence")
        grams = char_trigrams(normalize_for_trigrams(sentence))
        if not grams:
            raise InvalidInputError(f"sentence has no alphanumeric content: {sentence!r}")
        v = np.zeros(self.dimension)
        for gram in grams:
            v[zlib.crc32(gram.encode("utf-8")) % self.dimension] += 1.0
        return v / np.linalg.norm(v)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class BigramScorer:
    """Add-one smoothed token bigram model.

    The first continuation token is conditioned on the last prompt token, and an
    end-of-text token is scored after the continuation, so every conditional
    distribution sums to one over the vocabulary.
    """

    def __init__(self, corpus: Iterable[str]):
        self.bigrams: Counter[tuple[str, str]] = Counter()
        self.history: Counter[str] = Counter()
        vocab = {EOS, UNK}
        for doc in corpus:
            tokens = tokenize(doc)
            vocab.update(tokens)
            seq = [BOS, *tokens, EOS]
            for prev, cur in zip(seq, seq[1:]):
                self.bigrams[prev, cur] += 1
                self.history[prev] += 1
        self.vocab = frozenset(vocab)

    def _map(self, token: str) -> str:
        return token if token in self.vocab else UNK

    def log_prob(self, prev: str, token: str) -> float:
        return math.log((self.bigrams[prev, token] + 1) / (self.history[prev] + len(self.vocab)))

    def score_loglik(self, prompt: Prompt | str, continuation: str) -> float:
        tokens = [self._map(t) for t in tokenize(continuation)]
        if not tokens:
            raise InvalidInputError("continuation has no tokens")
        context = tokenize(as_prompt(prompt).text)
        prev = self._map(context[-1]) if context else BOS
        total = 0.0
        for tok in [*tokens, EOS]:
            total += self.log_prob(prev, tok)
            prev = tok
        return total


def load_corpus(path: Path | str) -> list[str]:
    """Read a plain-text corpus; documents are separated by blank lines."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read corpus {path}: {exc}") from exc
    return [doc.strip() for doc in re.split(r"\n\s*\n", text) if doc.strip()]


def make_providers(
    config: ProviderConfig,
    *,
    corpus: Iterable[str] | None = None,
    client: httpx.Client | None = None,
) -> tuple[CompletionProvider, Embedder, LikelihoodScorer]:
    """Build (completer, embedder, scorer) for ``config``.

    The bigram fixture scorer is fitted on ``config.corpus_path`` when set,
    otherwise on ``corpus``. Remote embedding/scoring are used only when their
    endpoints are configured; otherwise the fixture implementations stand in.
    """
    if config.corpus_path is not None:
        corpus = load_corpus(config.corpus_path)
    if config.kind == "fixture":
        completer: CompletionProvider = (
            FixtureCompletionProvider.from_file(config.fixtures_path)
            if config.fixtures_path is not None
            else FixtureCompletionProvider()
        )
        return completer, TrigramEmbedder(), BigramScorer(corpus or [])

    transport = RemoteClient(config, client=client)
    completer = RemoteCompletionProvider(config, transport)
    embedder: Embedder = RemoteEmbedder(config, transport) if config.embed_endpoint else TrigramEmbedder()
    scorer: LikelihoodScorer = (
        RemoteScorer(config, transport) if config.score_endpoint else BigramScorer(corpus or [])
    )
    return completer, embedder, scorer
