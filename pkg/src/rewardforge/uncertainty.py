"""Code uncertainty quantification for generated reward components.

A component batch is several independently sampled implementations of the
same behavioral aspect.  Agreement between them (textually or semantically,
whichever is stronger) is evidence that the task description pins the
implementation down; disagreement raises the uncertainty score

    u = 1 - max(s_text, s_semantic)

which later steers refinement and the optimization budget split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .dsl.nodes import EnvSignature, RewardTerm
from .dsl.parser import parse_term
from .dsl.printer import print_term
from .library import ComponentLibrary, LibraryRecord
from .similarity import (
    EmbeddingVector,
    cosine,
    cosine_to_unit,
    textual_similarity,
    tokenize_canonical,
)

ORIGINS = ("generated", "library", "refined")
LIBRARY_TOP_K = 16


@dataclass(frozen=True)
class CUQConfig:
    """Knobs for the uncertainty stage."""

    n_samples: int = 5
    tau: float = 0.3
    n_alt: int = 3
    max_refine_rounds: int = 2

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.n_alt < 1:
            raise ValueError("n_alt must be >= 1")
        if self.max_refine_rounds < 0:
            raise ValueError("max_refine_rounds must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "tau": self.tau,
            "n_alt": self.n_alt,
            "max_refine_rounds": self.max_refine_rounds,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CUQConfig":
        return cls(**raw)


@dataclass(frozen=True)
class ComponentSample:
    """One sampled implementation of a component.

    ``source`` is always the canonical print of ``term``, so textual
    comparisons never see formatting noise.
    """

    term: RewardTerm
    source: str
    origin: str
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        if self.source != print_term(self.term):
            raise ValueError("source must be the canonical print of term")

    @classmethod
    def from_source(cls, source: str, signature: EnvSignature | None = None,
                    origin: str = "generated",
                    embedding: EmbeddingVector | None = None) -> "ComponentSample":
        term = parse_term(source, signature)
        return cls(term=term, source=print_term(term), origin=origin, embedding=embedding)

    def with_embedding(self, embedding: EmbeddingVector) -> "ComponentSample":
        return replace(self, embedding=embedding)

    def to_dict(self) -> dict:
        return {
            "name": self.term.name,
            "aspect": self.term.aspect_tag,
            "origin": self.origin,
            "source": self.source,
        }


@dataclass(frozen=True)
class UncertaintyReport:
    """Uncertainty scores for one component batch.

    ``peer_count`` is the number of other members each member was compared
    against (batch plus retrieved library records minus one), and
    ``library_match`` names the best-matching library record, if any.
    """

    component_name: str
    s_text: float
    s_semantic: float
    u: float
    peer_count: int
    library_match: str | None = None

    def __post_init__(self):
        for label, s in (("s_text", self.s_text), ("s_semantic", self.s_semantic)):
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"{label} must be in [0, 1], got {s}")
        if self.u != 1.0 - max(self.s_text, self.s_semantic):
            raise ValueError("u must equal 1 - max(s_text, s_semantic) exactly")
        if self.peer_count < 0:
            raise ValueError("peer_count must be >= 0")

    def to_dict(self) -> dict:
        return {
            "component_name": self.component_name,
            "s_text": self.s_text,
            "s_semantic": self.s_semantic,
            "u": self.u,
            "peer_count": self.peer_count,
            "library_match": self.library_match,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "UncertaintyReport":
        return cls(**raw)


def attach_embeddings(samples: list[ComponentSample], provider) -> list[ComponentSample]:
    """Embed every sample that does not carry a vector yet."""
    out = []
    for s in samples:
        if s.embedding is None:
            out.append(s.with_embedding(provider.embed(s.source)))
        else:
            out.append(s)
    return out


def _component_aspect(samples: list[ComponentSample]) -> str:
    if not samples:
        raise ValueError("component batch must not be empty")
    aspects = {s.term.aspect_tag for s in samples}
    if len(aspects) != 1:
        raise ValueError(f"component batch mixes aspects: {sorted(aspects)}")
    return samples[0].term.aspect_tag


def score_component(samples: list[ComponentSample],
                    library: ComponentLibrary | None = None,
                    k: int = LIBRARY_TOP_K) -> UncertaintyReport:
    """Score one component batch against itself and the library.

    Similarities are maxima over all unordered pairs within the union of
    the batch and the top-k same-aspect library records.  A singleton
    batch with no library evidence has nothing to agree with: u = 1.
    """
    aspect = _component_aspect(samples)

    records: list[LibraryRecord] = []
    if library is not None and len(library) > 0:
        if samples[0].embedding is None:
            raise ValueError("samples must carry embeddings; call attach_embeddings first")
        records = library.query(aspect, samples[0].embedding, k)

    sources = [s.source for s in samples] + [r.source for r in records]
    vectors = [s.embedding for s in samples] + [r.vector() for r in records]
    n = len(sources)
    if n == 1:
        return UncertaintyReport(component_name=aspect, s_text=0.0, s_semantic=0.0,
                                 u=1.0, peer_count=0, library_match=None)
    if any(v is None for v in vectors):
        raise ValueError("samples must carry embeddings; call attach_embeddings first")

    streams = [tokenize_canonical(src) for src in sources]
    s_text = 0.0
    s_semantic = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s_text = max(s_text, textual_similarity(streams[i], streams[j]))
            s_semantic = max(s_semantic, cosine_to_unit(cosine(vectors[i], vectors[j])))

    library_match = None
    if records:
        best = -1.0
        for rec_idx, rec in enumerate(records):
            ri = len(samples) + rec_idx
            for si in range(len(samples)):
                pair = max(textual_similarity(streams[si], streams[ri]),
                           cosine_to_unit(cosine(vectors[si], vectors[ri])))
                if pair > best:
                    best = pair
                    library_match = rec.id

    return UncertaintyReport(
        component_name=aspect,
        s_text=s_text,
        s_semantic=s_semantic,
        u=1.0 - max(s_text, s_semantic),
        peer_count=n - 1,
        library_match=library_match,
    )


def select_representative(samples: list[ComponentSample]) -> ComponentSample:
    """Medoid of the batch: the sample most similar, on average, to the rest.

    Pairwise similarity is max(s_text, s_semantic); ties keep the earliest
    generation index.
    """
    _component_aspect(samples)
    if len(samples) == 1:
        return samples[0]
    if any(s.embedding is None for s in samples):
        raise ValueError("samples must carry embeddings; call attach_embeddings first")

    streams = [tokenize_canonical(s.source) for s in samples]
    n = len(samples)
    best_idx = 0
    best_mean = -1.0
    for i in range(n):
        total = 0.0
        for j in range(n):
            if j == i:
                continue
            total += max(textual_similarity(streams[i], streams[j]),
                         cosine_to_unit(cosine(samples[i].embedding, samples[j].embedding)))
        mean = total / (n - 1)
        if mean > best_mean:
            best_mean = mean
            best_idx = i
    return samples[best_idx]


def refine(samples: list[ComponentSample], report: UncertaintyReport, provider,
           task, tau: float, n_alt: int) -> tuple[list[ComponentSample], bool]:
    """Ask the gateway for alternatives when a batch is too uncertain.

    Returns (samples, False) untouched when u <= tau; otherwise a new list
    with the originals first and n_alt freshly embedded alternatives
    appended, flagged True.  Originals are never mutated or discarded.
    """
    if report.u <= tau:
        return list(samples), False
    signature = getattr(task, "signature", None)
    result = provider.generate_alternatives(samples[0].source, task, n_alt)
    alts = [ComponentSample.from_source(src, signature, origin="refined")
            for src in result.sources]
    alts = attach_embeddings(alts, provider)
    return list(samples) + alts, True


@dataclass
class ComponentResult:
    """Everything CUQ produced for one component."""

    aspect: str
    samples: list[ComponentSample]
    reports: list[UncertaintyReport]
    representative: ComponentSample
    refine_rounds: int
    library_record: str | None = None

    @property
    def final_report(self) -> UncertaintyReport:
        return self.reports[-1]

    def to_dict(self) -> dict:
        return {
            "aspect": self.aspect,
            "samples": [s.to_dict() for s in self.samples],
            "reports": [r.to_dict() for r in self.reports],
            "representative": self.representative.to_dict(),
            "refine_rounds": self.refine_rounds,
            "library_record": self.library_record,
        }


@dataclass
class CUQResult:
    """Per-component CUQ outcomes keyed by aspect, in component order."""

    components: dict[str, ComponentResult] = field(default_factory=dict)

    @property
    def representatives(self) -> dict[str, ComponentSample]:
        return {a: c.representative for a, c in self.components.items()}

    @property
    def final_reports(self) -> dict[str, UncertaintyReport]:
        return {a: c.final_report for a, c in self.components.items()}

    def provider_calls(self) -> int:
        """Refinement requests issued (generation calls are counted by the caller)."""
        return sum(c.refine_rounds for c in self.components.values())

    def to_dict(self) -> dict:
        return {a: c.to_dict() for a, c in self.components.items()}


def run_cuq(batches: dict[str, list[ComponentSample]],
            library: ComponentLibrary | None, provider, task,
            cfg: CUQConfig) -> CUQResult:
    """Score, refine, and select a representative for every component.

    Batches are keyed by aspect and processed in key order.  Each selected
    representative is appended to the library (when one is given) so later
    runs can retrieve it.
    """
    result = CUQResult()
    for aspect, batch in batches.items():
        samples = attach_embeddings(list(batch), provider)
        reports = [score_component(samples, library)]
        rounds = 0
        while reports[-1].u > cfg.tau and rounds < cfg.max_refine_rounds:
            samples, used = refine(samples, reports[-1], provider, task,
                                   cfg.tau, cfg.n_alt)
            if not used:
                break
            rounds += 1
            reports.append(score_component(samples, library))
        representative = select_representative(samples)
        record_id = None
        if library is not None:
            record_id = library.insert(aspect, representative.source,
                                       representative.embedding).id
        result.components[aspect] = ComponentResult(
            aspect=aspect,
            samples=samples,
            reports=reports,
            representative=representative,
            refine_rounds=rounds,
            library_record=record_id,
        )
    return result
