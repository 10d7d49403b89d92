"""Template embedding tables and session materialisation.

``embeddings.bin`` layout: the magic ``LOGEMB01``, a JSON header line
``{"rows", "dim", "source_name"}``, then rows*dim little-endian float32 values.
Any external sentence encoder can produce it; when none is available,
``hashed_table`` builds a deterministic stand-in.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .drain import WILDCARD
from .sessionizer import Session

MAGIC = b"LOGEMB01"


class EmbeddingError(ValueError):
    pass


class RowCountMismatch(EmbeddingError):
    pass


class NonFiniteValues(EmbeddingError):
    pass


class TruncatedFile(EmbeddingError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    vectors: np.ndarray
    source: str = "file"

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise EmbeddingError("embedding matrix must be 2-D")
        if not np.isfinite(self.vectors).all():
            raise NonFiniteValues("embedding table contains NaN or Inf")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def rows(self) -> int:
        return self.vectors.shape[0]


@dataclass
class SessionMatrix:
    values: np.ndarray  # (l, d)
    mask: np.ndarray  # (l,) True at real events
    label: bool


def save_embeddings(path: str | Path, table: EmbeddingTable, source_name: str | None = None) -> None:
    header = {"rows": table.rows, "dim": table.dim, "source_name": source_name or table.source}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())


def load_embeddings(path: str | Path, expected_templates: int | None = None) -> EmbeddingTable:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise EmbeddingError(f"{path}: bad magic, not an embeddings file")
    nl = raw.find(b"\n", 8)
    if nl < 0:
        raise TruncatedFile(f"{path}: truncated header")
    header = json.loads(raw[8:nl])
    rows, dim = int(header["rows"]), int(header["dim"])
    if expected_templates is not None and rows != expected_templates:
        raise RowCountMismatch(f"row count mismatch: file has {rows}, expected {expected_templates}")
    payload = raw[nl + 1:]
    if len(payload) != 4 * rows * dim:
        raise TruncatedFile(f"{path}: expected {4 * rows * dim} payload bytes, found {len(payload)}")
    vectors = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(rows, dim)
    if not np.isfinite(vectors).all():
        raise NonFiniteValues(f"{path}: non-finite values in embedding rows")
    source = "hashed" if str(header.get("source_name", "")).startswith("hashed") else "file"
    return EmbeddingTable(vectors, source)


@lru_cache(maxsize=65536)
def _feature_vector(feature: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x1f{feature}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


_SUFFIXES = ("ing", "ed", "es", "s")


def normalize_token(token: str) -> str:
    """Lowercase and strip one inflectional suffix, keeping at least 3 characters."""
    tok = token.lower()
    for suf in _SUFFIXES:
        if tok.endswith(suf) and len(tok) - len(suf) >= 3:
            return tok[: -len(suf)]
    return tok


def _token_features(token: str) -> list[str]:
    base = normalize_token(token)
    padded = f"<{base}>"
    grams = [padded[i:i + 3] for i in range(len(padded) - 2)]
    return ["w:" + base] + ["g:" + g for g in grams]


def hashed_embedding(template_tokens: Sequence[str], dim: int, seed: int = 17) -> np.ndarray:
    """Unit-norm vector built from hashed word and character-trigram features.

    Tokens are reduced to an uninflected base first ("terminated" and
    "terminating" coincide). Each token contributes the normalised sum of its
    features, so tokens that share stems land near each other while unrelated
    templates are close to orthogonal. Wildcards carry no content and are skipped unless the template
    is nothing but wildcards.
    """
    if dim < 8:
        raise EmbeddingError("dim must be >= 8")
    tokens = [t for t in template_tokens if t != WILDCARD] or list(template_tokens)
    if not tokens:
        raise EmbeddingError("cannot embed an empty token list")
    acc = np.zeros(dim)
    for tok in tokens:
        vec = sum(_feature_vector(f, dim, seed) for f in _token_features(tok))
        acc += vec / np.linalg.norm(vec)
    return (acc / np.linalg.norm(acc)).astype(np.float32)


def hashed_table(templates: Sequence[Sequence[str]], dim: int, seed: int = 17) -> EmbeddingTable:
    return EmbeddingTable(np.stack([hashed_embedding(t, dim, seed) for t in templates]), "hashed")


def materialize(session: Session, table: EmbeddingTable, l: int = 20) -> SessionMatrix:  # noqa: E741
    if l < 1:
        raise EmbeddingError("session length l must be >= 1")
    ids = list(session.template_ids[:l])
    for t in ids:
        if not 0 <= t < table.rows:
            raise EmbeddingError(f"template id {t} out of range for a table of {table.rows} rows")
    values = np.zeros((l, table.dim), np.float32)
    mask = np.zeros(l, bool)
    if ids:
        values[: len(ids)] = table.vectors[ids]
        mask[: len(ids)] = True
    return SessionMatrix(values, mask, bool(session.label))


@dataclass
class SessionArrays:
    """Stacked sessions ready for batching."""

    x: np.ndarray  # (n, l, d) float32
    mask: np.ndarray  # (n, l) bool
    y: np.ndarray  # (n,) float32

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> SessionArrays:
        return SessionArrays(self.x[idx], self.mask[idx], self.y[idx])


def materialize_all(sessions: Sequence[Session], table: EmbeddingTable, l: int = 20) -> SessionArrays:  # noqa: E741
    sessions = [s for s in sessions if s.template_ids]
    n = len(sessions)
    x = np.zeros((n, l, table.dim), np.float32)
    mask = np.zeros((n, l), bool)
    y = np.zeros(n, np.float32)
    for i, s in enumerate(sessions):
        m = materialize(s, table, l)
        x[i], mask[i], y[i] = m.values, m.mask, m.label
    return SessionArrays(x, mask, y)
