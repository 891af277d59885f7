"""Deterministic text encoder: signed hashed n-gram frequencies, L2-normalized.

Stands in for a pre-trained sentence encoder behind a small, stable contract:
same text and config always produce the same unit-norm vector. The hashing
scheme is fixed so an independent reimplementation can reproduce it exactly:

* tokens: lowercase, split on whitespace
* grams: contiguous token n-grams for n in [ngram_min, ngram_max], joined
  with a single space
* hash: BLAKE2b, 8-byte digest, key = seed as signed little-endian int64;
  digest read as unsigned little-endian int64
* bucket: ``hash % dimension``; sign: +1 if the hash's top bit is 0 else -1
* value: signed gram count, then the vector is L2-normalized
  (all-whitespace or empty text stays the zero vector)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvariantViolation


@dataclass(frozen=True)
class EncoderConfig:
    dimension: int = 256
    ngram_range: tuple[int, int] = (1, 2)
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 8:
            raise InvariantViolation(f"encoder dimension must be >= 8, got {self.dimension}")
        lo, hi = self.ngram_range
        if not (1 <= lo <= hi):
            raise InvariantViolation(f"invalid ngram_range {self.ngram_range}")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "dimension": self.dimension,
                "ngram_range": list(self.ngram_range),
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "ngram_range": list(self.ngram_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            dimension=int(d.get("dimension", 256)),
            ngram_range=tuple(d.get("ngram_range", (1, 2))),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class Embedding:
    """A fixed-dimension dense vector stamped with its encoder fingerprint."""

    values: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        vec = np.asarray(self.values, dtype=np.float64)
        if vec.ndim != 1:
            raise DimensionMismatch(f"embedding must be 1-D, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise InvariantViolation("embedding contains non-finite entries")
        vec.flags.writeable = False
        object.__setattr__(self, "values", vec)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def _gram_hash(gram: str, key: bytes) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
    return struct.unpack("<Q", digest)[0]


def encode(text: str, cfg: EncoderConfig) -> Embedding:
    """Map text to a unit-norm vector (zero vector for empty/whitespace text)."""
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    tokens = text.lower().split()
    if tokens:
        key = struct.pack("<q", cfg.seed)
        lo, hi = cfg.ngram_range
        for n in range(lo, hi + 1):
            for i in range(len(tokens) - n + 1):
                h = _gram_hash(" ".join(tokens[i : i + n]), key)
                sign = 1.0 if h < (1 << 63) else -1.0
                vec[h % cfg.dimension] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
    return Embedding(values=vec, fingerprint=cfg.fingerprint)


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity; zero vectors compare as 0 to avoid NaN."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"cosine: dimensions {a.dimension} != {b.dimension}")
    na, nb = a.norm, b.norm
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))
