"""Retrieval-augmented syntax repair.

The compiler log is embedded, compared by cosine similarity against every
rule exemplar in the library, and the best rule's repair summary goes into
the repair prompt together with the failing code.
"""
from __future__ import annotations

import json
import logging
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateInputError, EmbeddingError, ExtractionError, ProviderError,
                     RetrievalError, ShapeError, ValidationError)
from .gateway import extract_fenced_code, render_template
from .prompts import SYNTAX_REPAIR
from .workspace import NullArchive

log = logging.getLogger(__name__)

DEFAULT_LIBRARY = Path(__file__).parent / "rules" / "library.ndrules"
_DIGITS = re.compile(r"\d+")
_SPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def dimension(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def scaled(self, k: float) -> "EmbeddingVector":
        return EmbeddingVector(tuple(v * k for v in self.values))


class TrigramEmbedder:
    """Hashed character-trigram term frequencies; digits collapse to one placeholder."""

    def __init__(self, dim: int = 1024):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.embedder_id = f"trigram-tf-{dim}"

    @staticmethod
    def normalize(text: str) -> str:
        return _SPACE.sub(" ", _DIGITS.sub("0", text.lower())).strip()

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        t = f"  {self.normalize(text)}  "
        vec = np.zeros(self.dim)
        for i in range(len(t) - 2):
            vec[zlib.crc32(t[i:i + 3].encode("utf-8")) % self.dim] += 1.0
        return EmbeddingVector(vec)


class SentenceEmbedder:
    """Optional sentence-transformer backend (``pip install artifact[embed]``)."""

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EmbeddingError("sentence-transformers is not installed") from exc
        self.model = SentenceTransformer(model_name)
        self.embedder_id = f"st-{model_name}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        return EmbeddingVector(self.model.encode([text])[0])


_DEFAULT_EMBEDDER = TrigramEmbedder()


def embed_text(text: str, embedder=None) -> EmbeddingVector:
    return (embedder or _DEFAULT_EMBEDDER).embed(text)


def cosine_similarity(a, b) -> float:
    """dot(a, b) / (|a| |b|), clipped into [-1, 1] against rounding."""
    x = a.array() if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=float)
    y = b.array() if isinstance(b, EmbeddingVector) else np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    return max(-1.0, min(1.0, float(np.dot(x, y)) / (nx * ny)))


@dataclass(frozen=True)
class RuleTemplate:
    rule_id: str
    error_exemplar: str
    repair_rule: str
    source_note: str = ""

    def __post_init__(self):
        if not self.error_exemplar.strip() or not self.repair_rule.strip():
            raise ValidationError(f"rule {self.rule_id}: exemplar and repair rule are required")

    def to_json(self) -> str:
        return json.dumps({"rule_id": self.rule_id, "error_exemplar": self.error_exemplar,
                           "repair_rule": self.repair_rule, "source_note": self.source_note},
                          ensure_ascii=False)


@dataclass
class RuleLibrary:
    templates: list
    embedder: object = field(default_factory=lambda: _DEFAULT_EMBEDDER)
    cached_embeddings: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.rule_id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise ValidationError("rule ids must be unique")
        if not self.cached_embeddings:
            self.cached_embeddings = {t.rule_id: self.embedder.embed(t.error_exemplar)
                                      for t in self.templates}
        if set(self.cached_embeddings) != set(ids):
            raise ValidationError("cached embeddings must be keyed exactly by the rule ids")
        if len({v.dimension for v in self.cached_embeddings.values()}) > 1:
            raise ShapeError("cached embeddings differ in dimension")

    @property
    def embedder_id(self) -> str:
        return self.embedder.embedder_id

    def get(self, rule_id: str) -> RuleTemplate:
        for t in self.templates:
            if t.rule_id == rule_id:
                return t
        raise KeyError(rule_id)

    @classmethod
    def load(cls, path=DEFAULT_LIBRARY, embedder=None) -> "RuleLibrary":
        templates = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    templates.append(RuleTemplate(d["rule_id"], d["error_exemplar"],
                                                  d["repair_rule"], d.get("source_note", "")))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValidationError(f"{path}:{n}: bad rule record ({exc})") from exc
        return cls(templates, embedder or _DEFAULT_EMBEDDER)

    def save(self, path) -> None:
        Path(path).write_text("".join(t.to_json() + "\n" for t in self.templates),
                              encoding="utf-8")


def add_rule(path, template: RuleTemplate) -> None:
    """Append one record; the library file is otherwise never rewritten."""
    lib = RuleLibrary.load(path) if Path(path).exists() else None
    if lib is not None and template.rule_id in {t.rule_id for t in lib.templates}:
        raise ValidationError(f"rule id {template.rule_id} already exists")
    with open(path, "a", encoding="utf-8") as f:
        f.write(template.to_json() + "\n")


@dataclass
class RetrievalResult:
    rule: RuleTemplate
    similarity: float

    def to_dict(self) -> dict:
        return {"rule_id": self.rule.rule_id, "similarity": round(self.similarity, 12)}


def retrieve_rule(library: RuleLibrary, error_log: str,
                  min_similarity: float | None = None) -> RetrievalResult | None:
    """Highest-similarity template; ties go to the lexicographically smallest rule id.

    With ``min_similarity`` set, a best match below it yields None.
    """
    if not library.templates:
        raise RetrievalError("rule library is empty")
    e = library.embedder.embed(error_log)
    best = None
    for t in sorted(library.templates, key=lambda t: t.rule_id):
        s = cosine_similarity(e, library.cached_embeddings[t.rule_id])
        if best is None or s > best.similarity:
            best = RetrievalResult(t, s)
    if min_similarity is not None and best.similarity < min_similarity:
        return None
    return best


@dataclass
class SyntaxRepairOutcome:
    status: str                 # Pass | Exhausted
    hdl: object
    attempts: int
    retrievals: list = field(default_factory=list)


def repair_syntax_loop(hdl, library: RuleLibrary, gateway, compile_fn, limit: int,
                       archive=None, min_similarity: float | None = None) -> SyntaxRepairOutcome:
    """Retrieve, prompt, recompile until the code compiles or ``limit`` attempts are spent.

    ``compile_fn(code) -> CompileResult``. Tool environment errors propagate
    unchanged and consume nothing.
    """
    from .hdlgen import HdlSource

    if hdl.syntax_status != "Fail":
        raise ValueError("repair_syntax_loop needs a failing HdlSource")
    archive = archive or NullArchive()
    current = hdl
    retrievals = []
    for attempt in range(1, limit + 1):
        result = retrieve_rule(library, current.syntax_log, min_similarity)
        retrievals.append(result)
        prompt = render_template(SYNTAX_REPAIR, {
            "submodule_id": hdl.submodule_id, "attempt": attempt,
            "error_log": current.syntax_log.strip(),
            "rule_id": result.rule.rule_id if result else "none",
            "similarity": f"{result.similarity:.4f}" if result else "n/a",
            "repair_rule": result.rule.repair_rule if result else "No matching rule.",
            "code": current.code.rstrip("\n")})
        record = {"attempt": attempt, "retrieval": result.to_dict() if result else None}
        try:
            ex = gateway.complete(prompt)
            record["response"] = ex.response
            code = extract_fenced_code(ex.response, "verilog")
        except (ProviderError, ExtractionError) as exc:
            record["error"] = str(exc)
            archive.put(f"attempt{attempt}.json", json.dumps(record, indent=2, sort_keys=True))
            log.info("%s syntax attempt %d consumed: %s", hdl.submodule_id, attempt, exc)
            continue
        res = compile_fn(code)
        record["compile"] = {"status": res.status, "log": res.log}
        archive.put(f"attempt{attempt}.json", json.dumps(record, indent=2, sort_keys=True))
        archive.put(f"attempt{attempt}.v", code)
        cand = HdlSource(hdl.submodule_id, attempt, code)
        if res.ok:
            return SyntaxRepairOutcome("Pass", cand.passed(), attempt, retrievals)
        current = cand.failed(res.log)
    return SyntaxRepairOutcome("Exhausted", current, limit, retrievals)
