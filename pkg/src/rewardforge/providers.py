"""Code-generation and embedding providers.

Two implementations behind one interface: a deterministic offline mock that
assembles reward sources from a template corpus (a pure function of corpus,
seed, and request, so offline runs reproduce bit-for-bit), and an HTTP
client speaking the minimal chat-completion / embedding wire shape. The
offline embedder is shared: 256 dims, the L2-normalized concatenation of a
192-dim hashed token-frequency block over the canonical token stream and a
64-dim AST node-kind histogram.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dsl.lexer import FUNC_KEYWORDS
from .dsl.nodes import (Constant, EnvSignature, RewardTerm, map_constants,
                        rename_hypers)
from .dsl.parser import parse, parse_fragment, parse_term
from .dsl.printer import print_term
from .errors import (ConfigError, DimensionDriftError, GenerationError,
                     ProviderUnavailableError)
from .seeds import derive_seed, generator
from .similarity import EmbeddingVector, TokenStream, levenshtein, tokenize_canonical

OFFLINE_EMBED_ID = "offline-v1"
EMBED_DIM = 256
_TF_DIM = 192
_TF_SEED = "tf-v1"
_AST_DIM = 64

# fixed ordering of the AST histogram bins; index = position here
NODE_KIND_ORDER = (
    "constant", "state_ref", "action_ref", "hyper_ref",
    "neg", "abs", "exp", "tanh", "sqrt",
    "add", "sub", "mul", "div", "min", "max", "pow",
    "clip",
)

PARSE_RETRY_CAP = 3

# pool of replacement hyperparameter names used by the mock perturbations
_HYPER_NAME_POOL = (
    "gain", "scale", "coef", "weight_k", "rate_r", "bonus_m", "level_q",
    "factor_f", "span_s", "mix_m",
)


@dataclass(frozen=True)
class TaskDescription:
    """What the generator is asked for: task text, env, and aspect tags."""

    text: str
    env_name: str
    signature: EnvSignature
    aspects: tuple[str, ...]

    def __post_init__(self):
        if not self.text.strip():
            raise ConfigError("task description text must be non-empty")
        if not self.aspects:
            raise ConfigError("at least one aspect tag is required")

    def to_dict(self) -> dict:
        return {"text": self.text, "env_name": self.env_name,
                "signature": self.signature.to_dict(),
                "aspects": list(self.aspects)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskDescription":
        return cls(text=str(d["text"]), env_name=str(d["env_name"]),
                   signature=EnvSignature.from_dict(d["signature"]),
                   aspects=tuple(str(a) for a in d["aspects"]))


@dataclass(frozen=True)
class ProviderConfig:
    """Provider selection and knobs. Auth is referenced by env-var name only;
    the token value itself is never stored or serialized."""

    kind: str = "mock"
    # mock
    corpus_path: str | None = None
    magnitude: float = 0.05
    seed: int = 0
    # http
    endpoint: str | None = None
    model: str | None = None
    auth_env: str = "REWARDFORGE_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"provider kind must be 'mock' or 'http', got {self.kind!r}")
        if self.kind == "http" and (not self.endpoint or not self.model):
            raise ConfigError("http provider requires endpoint and model")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ConfigError("perturbation magnitude must be in [0, 1]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "corpus_path": self.corpus_path,
                "magnitude": self.magnitude, "seed": self.seed,
                "endpoint": self.endpoint, "model": self.model,
                "auth_env": self.auth_env, "timeout": self.timeout,
                "max_retries": self.max_retries}

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown provider config fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class GenerationResult:
    """Sources produced by a provider, plus call metadata."""

    sources: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sources)


# ---------------------------------------------------------------------------
# offline embedding


def _tf_bucket(kind: str, lexeme: str) -> int:
    digest = hashlib.sha256(f"{_TF_SEED}|{kind}:{lexeme}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % _TF_DIM


def _is_content_token(kind: str, lexeme: str) -> bool:
    # canonical placeholder idents (v0, v1, ...) appear in every term and
    # carry no signal; feature refs keep their dotted lexeme
    if kind == "ident":
        return "." in lexeme
    if kind == "number":
        return True
    return kind == "keyword" and lexeme in FUNC_KEYWORDS


def _tf_block(stream: TokenStream) -> np.ndarray:
    vec = np.zeros(_TF_DIM)
    for kind, lexeme in stream.tokens:
        if _is_content_token(kind, lexeme):
            vec[_tf_bucket(kind, lexeme)] += 1.0
    return np.sqrt(vec)


def _ast_block(terms: list[RewardTerm]) -> np.ndarray:
    from .dsl.nodes import node_kinds
    index = {k: i for i, k in enumerate(NODE_KIND_ORDER)}
    vec = np.zeros(_AST_DIM)
    for term in terms:
        for kind in node_kinds(term.expr):
            vec[index[kind]] += 1.0
    return np.sqrt(vec)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0.0 else vec


# token block amplitude relative to the AST block; AST kind histograms of
# same-env reward terms overlap heavily, so token evidence carries the vote
_TF_BLOCK_WEIGHT = np.sqrt(10.0)


def embed_offline(source: str) -> EmbeddingVector:
    """Deterministic structural embedding of DSL text.

    Token counts are sqrt-damped and bucket-hashed over the canonical
    stream, so alpha-renamed sources embed identically. Each block is
    unit-normalized before concatenation, the token block weighted up,
    and the concatenation normalized again to unit length.
    """
    if not source.strip():
        raise GenerationError("cannot embed empty source")
    stream = tokenize_canonical(source)
    terms = parse_fragment(source)
    full = np.concatenate([_TF_BLOCK_WEIGHT * _unit(_tf_block(stream)),
                           _unit(_ast_block(terms))])
    return EmbeddingVector(values=tuple(_unit(full)), provider_id=OFFLINE_EMBED_ID)


# ---------------------------------------------------------------------------
# prompt assets


def _prompt_dir():
    return resources.files("rewardforge").joinpath("data/prompts")


def load_prompt(name: str) -> str:
    return _prompt_dir().joinpath(f"{name}.txt").read_text(encoding="utf-8")


def prompt_hashes() -> dict[str, str]:
    """sha256 of every shipped prompt template, recorded in run reports."""
    out = {}
    for entry in sorted(_prompt_dir().iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            text = entry.read_text(encoding="utf-8")
            out[entry.name[:-4]] = hashlib.sha256(text.encode()).hexdigest()
    return out


def _signature_lines(sig: EnvSignature) -> str:
    state = ", ".join(f"state.{n} ({u})" for n, u in sig.state)
    action = ", ".join(f"action.{n} ({u})" for n, u in sig.action)
    return f"State features: {state}\nAction features: {action}"


# ---------------------------------------------------------------------------
# mock provider


def load_corpus(path: str | None = None) -> list[dict]:
    """Load a template corpus: JSON array of {aspect, dsl_source, note}."""
    if path is None:
        text = resources.files("rewardforge").joinpath(
            "data/mock_corpus.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    corpus = json.loads(text)
    for i, rec in enumerate(corpus):
        missing = {"aspect", "dsl_source", "note"} - set(rec)
        if missing:
            raise ConfigError(f"corpus record {i} missing fields {sorted(missing)}")
    return corpus


def _char_stream(s: str) -> TokenStream:
    return TokenStream(tuple(("c", ch) for ch in s))


class MockProvider:
    """Offline generator: seeded template draws plus seeded perturbations.

    A pure function of (corpus, seed, request): the template for sample j of
    an aspect walks a seeded permutation of the compatible templates
    (cycling), and each sample gets its own perturbation stream
    (hyperparameter renaming, multiplicative constant jitter bounded by the
    configured magnitude, term reordering). Magnitude 0 disables every
    perturbation, so sources quote the corpus verbatim.
    """

    provider_id = "mock"

    def __init__(self, corpus: list[dict], magnitude: float = 0.05,
                 seed: int = 0):
        self.corpus = list(corpus)
        self.magnitude = float(magnitude)
        self.seed = int(seed)
        self._compat_cache: dict = {}

    @classmethod
    def from_config(cls, cfg: ProviderConfig) -> "MockProvider":
        return cls(load_corpus(cfg.corpus_path), cfg.magnitude, cfg.seed)

    # -- template selection

    def aspects(self) -> tuple[str, ...]:
        seen = []
        for rec in self.corpus:
            if rec["aspect"] not in seen:
                seen.append(rec["aspect"])
        return tuple(seen)

    def _compatible(self, aspect: str, signature: EnvSignature) -> list[str]:
        key = (aspect, signature)
        if key not in self._compat_cache:
            found = []
            for rec in self.corpus:
                if rec["aspect"] != aspect:
                    continue
                try:
                    parse_term(rec["dsl_source"], signature)
                except Exception:
                    continue
                found.append(rec["dsl_source"])
            self._compat_cache[key] = found
        return self._compat_cache[key]

    def _nearest_aspect(self, aspect: str) -> str:
        known = self.aspects()
        want = _char_stream(aspect)
        return min(known, key=lambda a: (levenshtein(_char_stream(a), want), a))

    # -- perturbations

    def _perturb_term(self, source: str, signature: EnvSignature,
                      rng: np.random.Generator) -> str:
        if self.magnitude == 0.0:
            return source
        term = parse_term(source, signature)
        term = self._rename_hypers(term, rng)
        term = self._jitter_constants(term, rng)
        return print_term(term)

    def _rename_hypers(self, term: RewardTerm, rng: np.random.Generator
                       ) -> RewardTerm:
        if not term.hypers:
            return term
        pool = [n for n in _HYPER_NAME_POOL
                if n not in {h.name for h in term.hypers}]
        mapping = {}
        for h in term.hypers:
            if rng.random() < 0.5 and pool:
                pick = pool.pop(int(rng.integers(0, len(pool))))
                mapping[h.name] = pick
        if not mapping:
            return term
        return rename_hypers(term, mapping)

    def _jitter_constants(self, term: RewardTerm, rng: np.random.Generator
                          ) -> RewardTerm:
        mag = self.magnitude

        def tweak(node):
            if isinstance(node, Constant) and node.value != 0.0:
                factor = 1.0 + mag * float(rng.uniform(-1.0, 1.0))
                return Constant(node.value * factor)
            return None

        return map_constants(term, tweak)

    # -- generation API

    def generate_reward(self, task: TaskDescription, n: int) -> GenerationResult:
        if n < 1:
            raise GenerationError("n must be at least 1")
        t0 = time.monotonic()
        sources = []
        chosen: list[list[int]] = []
        for j in range(n):
            blocks = []
            order_key: list[str] = []
            picks = []
            for aspect in task.aspects:
                templates = self._compatible(aspect, task.signature)
                if not templates:
                    raise GenerationError(
                        f"no corpus template for aspect {aspect!r} "
                        f"compatible with env {task.env_name!r}")
                perm = generator(self.seed, "choose", task.env_name,
                                 aspect).permutation(len(templates))
                pick = int(perm[j % len(templates)])
                picks.append(pick)
                rng = generator(self.seed, "perturb", task.env_name, aspect, j)
                blocks.append(self._perturb_term(templates[pick],
                                                 task.signature, rng))
                order_key.append(aspect)
            if self.magnitude > 0.0 and len(blocks) > 1:
                order = generator(self.seed, "order", task.env_name,
                                  j).permutation(len(blocks))
                blocks = [blocks[i] for i in order]
            names = [parse_term(b, task.signature).name for b in blocks]
            combine = "combine = " + " + ".join(f"1.0 * {nm}" for nm in names) + ";"
            source = "\n".join(blocks) + "\n" + combine + "\n"
            parse(source, task.signature)  # gateway guarantee: sources parse
            sources.append(source)
            chosen.append(picks)
        return GenerationResult(
            sources=tuple(sources),
            metadata={"provider": self.provider_id, "attempts": [1] * n,
                      "latency_s": time.monotonic() - t0,
                      "template_picks": chosen, "flags": []})

    def generate_alternatives(self, source: str, context: TaskDescription,
                              n_alt: int) -> GenerationResult:
        """Perturbed variants anchored to the aspect's first compatible
        template (the corpus's canonical implementation)."""
        if n_alt < 1:
            raise GenerationError("n_alt must be at least 1")
        t0 = time.monotonic()
        frag = parse_fragment(source)
        aspect = frag[0].aspect_tag or ""
        flags = []
        if aspect not in self.aspects():
            fallback = self._nearest_aspect(aspect)
            flags.append(f"unknown-aspect:{aspect}->{fallback}")
            aspect = fallback
        templates = self._compatible(aspect, context.signature)
        if not templates:
            raise GenerationError(
                f"no corpus template for aspect {aspect!r} compatible "
                f"with env {context.env_name!r}")
        anchor = templates[0]
        src_key = hashlib.sha256(source.encode()).hexdigest()[:16]
        out = []
        for i in range(n_alt):
            rng = generator(self.seed, "refine", context.env_name, aspect,
                            src_key, i)
            alt = self._perturb_term(anchor, context.signature, rng)
            parse_term(alt, context.signature)
            out.append(alt if alt.endswith("\n") else alt + "\n")
        return GenerationResult(
            sources=tuple(out),
            metadata={"provider": self.provider_id, "attempts": [1] * n_alt,
                      "latency_s": time.monotonic() - t0, "flags": flags})

    def propose_values(self, names: tuple[str, ...], lows: tuple[float, ...],
                       highs: tuple[float, ...], count: int,
                       context_key: str) -> list[dict[str, float]]:
        """Seeded uniform draws inside the box; the mock stand-in for asking
        a language model to suggest hyperparameter values."""
        out = []
        for i in range(count):
            rng = generator(self.seed, "propose", context_key, i)
            out.append({nm: float(rng.uniform(lo, hi))
                        for nm, lo, hi in zip(names, lows, highs)})
        return out

    def embed(self, source: str) -> EmbeddingVector:
        return embed_offline(source)


# ---------------------------------------------------------------------------
# http provider


class HttpProvider:
    """Minimal chat-completion / embedding client.

    Wire shape: generation POSTs {model, messages, temperature} and reads
    choices[0].message.content; embedding POSTs {model, input} and reads
    data[0].embedding. Parse failures re-prompt with the error appended, up
    to PARSE_RETRY_CAP attempts per sample. Transport failures retry with
    exponential backoff up to max_retries. At most four requests are in
    flight at once.
    """

    def __init__(self, cfg: ProviderConfig, session=None, sleeper=time.sleep):
        import os

        import requests

        self.cfg = cfg
        self.session = session if session is not None else requests.Session()
        self.sleeper = sleeper
        self.provider_id = f"http:{cfg.model}"
        self._embed_dim: int | None = None
        self._gate = threading.Semaphore(4)
        self._token = os.environ.get(cfg.auth_env)

    # -- transport

    def _post(self, path: str, payload: dict) -> dict:
        url = self.cfg.endpoint.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        last = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                with self._gate:
                    resp = self.session.post(url, json=payload,
                                             headers=headers,
                                             timeout=self.cfg.timeout)
                if resp.status_code >= 500:
                    last = f"server error {resp.status_code}"
                elif resp.status_code >= 400:
                    raise ProviderUnavailableError(
                        f"provider rejected request: {resp.status_code}")
                else:
                    return resp.json()
            except ProviderUnavailableError:
                raise
            except Exception as exc:
                last = str(exc)
            if attempt < self.cfg.max_retries:
                self.sleeper(0.5 * (2.0 ** attempt))
        raise ProviderUnavailableError(f"provider unreachable: {last}")

    def _chat(self, messages: list[dict], temperature: float = 0.7) -> str:
        body = self._post("/chat/completions",
                          {"model": self.cfg.model, "messages": messages,
                           "temperature": temperature})
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailableError(
                f"malformed completion response: {exc}")

    def _generate_one(self, system: str, user: str, validate) -> tuple[str, int]:
        messages = [{"role": "system", "content": system},
                    {"role": "user", "content": user}]
        last_err = None
        for attempt in range(1, PARSE_RETRY_CAP + 1):
            text = self._chat(messages)
            try:
                validate(text)
                return text, attempt
            except Exception as exc:
                last_err = exc
                messages = messages + [
                    {"role": "assistant", "content": text},
                    {"role": "user",
                     "content": f"That did not parse: {exc}. "
                                "Reply with corrected DSL only."}]
        raise GenerationError(f"no parseable sample after "
                              f"{PARSE_RETRY_CAP} attempts: {last_err}")

    # -- generation API

    def generate_reward(self, task: TaskDescription, n: int) -> GenerationResult:
        if n < 1:
            raise GenerationError("n must be at least 1")
        t0 = time.monotonic()
        system = load_prompt("system_generate").format(
            signature=_signature_lines(task.signature))
        user = load_prompt("user_generate").format(
            task=task.text, aspects=", ".join(task.aspects))
        sources, attempts = [], []
        for i in range(n):
            try:
                text, tries = self._generate_one(
                    system, user, lambda s: parse(s, task.signature))
            except GenerationError as exc:
                raise GenerationError(f"sample {i}: {exc}")
            sources.append(text)
            attempts.append(tries)
        return GenerationResult(
            sources=tuple(sources),
            metadata={"provider": self.provider_id, "attempts": attempts,
                      "latency_s": time.monotonic() - t0, "flags": []})

    def generate_alternatives(self, source: str, context: TaskDescription,
                              n_alt: int) -> GenerationResult:
        if n_alt < 1:
            raise GenerationError("n_alt must be at least 1")
        t0 = time.monotonic()
        system = load_prompt("system_refine").format(
            signature=_signature_lines(context.signature))
        user = load_prompt("user_refine").format(
            task=context.text, source=source)
        sources, attempts = [], []
        for i in range(n_alt):
            try:
                text, tries = self._generate_one(
                    system, user, lambda s: parse_term(s, context.signature))
            except GenerationError as exc:
                raise GenerationError(f"alternative {i}: {exc}")
            sources.append(text)
            attempts.append(tries)
        return GenerationResult(
            sources=tuple(sources),
            metadata={"provider": self.provider_id, "attempts": attempts,
                      "latency_s": time.monotonic() - t0, "flags": []})

    def propose_values(self, names, lows, highs, count, context_key):
        system = load_prompt("system_propose")
        box = "\n".join(f"{nm}: [{lo}, {hi}]"
                        for nm, lo, hi in zip(names, lows, highs))
        user = load_prompt("user_propose").format(
            box=box, count=count, context=context_key)

        def validate(text):
            vals = json.loads(text)
            if not isinstance(vals, list) or len(vals) != count:
                raise ValueError(f"expected a JSON list of {count} objects")
            for row in vals:
                for nm, lo, hi in zip(names, lows, highs):
                    v = float(row[nm])
                    if not lo <= v <= hi:
                        raise ValueError(f"{nm}={v} outside [{lo}, {hi}]")

        text, _ = self._generate_one(system, user, validate)
        rows = json.loads(text)
        return [{nm: float(row[nm]) for nm in names} for row in rows]

    def embed(self, source: str) -> EmbeddingVector:
        body = self._post("/embeddings",
                          {"model": self.cfg.model, "input": source})
        try:
            values = tuple(float(x) for x in body["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailableError(f"malformed embedding response: {exc}")
        if self._embed_dim is None:
            self._embed_dim = len(values)
        elif len(values) != self._embed_dim:
            raise DimensionDriftError(self._embed_dim, len(values))
        return EmbeddingVector(values=values, provider_id=self.provider_id)


def make_provider(cfg: ProviderConfig, offline: bool = False):
    """Build the configured provider; offline=True forces the mock."""
    if offline or cfg.kind == "mock":
        if cfg.kind != "mock":
            cfg = ProviderConfig(kind="mock", corpus_path=None,
                                 magnitude=cfg.magnitude, seed=cfg.seed)
        return MockProvider.from_config(cfg)
    return HttpProvider(cfg)
