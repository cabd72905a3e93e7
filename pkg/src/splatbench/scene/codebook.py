"""Deterministic semantic embedding codebook.

Stands in for a learned text/image encoder: each label gets a unit vector in
a D-dimensional "decoded" space, constructed so that (a) all entries lie in a
fixed d-dimensional subspace, making encode/decode lossless on codebook
entries, and (b) distinct labels are near-orthogonal. Everything is seeded
and hash-derived, so codebooks are reproducible across runs and machines.
"""

from __future__ import annotations

import hashlib

import numpy as np


class UnknownLabelError(KeyError):
    """Label not present in the codebook."""


def _label_rng(label: str, seed: int, salt: int = 0) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{salt}:{label}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class EmbeddingCodebook:
    """Map label -> unit D-vector plus the linear encode/decode pair.

    encode: D -> d is projection onto the subspace basis; decode: d -> D is
    the lift by the same basis, so decode(encode(v)) == v for any v in the
    subspace (all codebook entries are, by construction). Entries are stored
    in D-space; d-space codes are always derived, which keeps file
    round-trips bit-exact.
    """

    def __init__(self, labels=(), seed: int = 0, d: int = 16, D: int = 64):
        if d > D:
            raise ValueError("compressed dimension d must not exceed D")
        self.seed = int(seed)
        self.d = int(d)
        self.D = int(D)
        rng = np.random.default_rng(self.seed)
        q, r = np.linalg.qr(rng.standard_normal((self.D, self.d)))
        self.basis = q * np.sign(np.diag(r))  # (D, d), orthonormal columns
        self._labels: list[str] = []
        self._entries: dict[str, np.ndarray] = {}  # label -> unit vector in R^D
        for label in labels:
            self.add_label(label)

    # -- construction -------------------------------------------------------

    def _candidate(self, label: str, attempt: int) -> np.ndarray:
        v = _label_rng(label, self.seed, attempt).standard_normal(self.d)
        return v / np.linalg.norm(v)

    def add_label(self, label: str) -> None:
        """Insert a label; no-op if present. Deterministic given insertion order.

        While fewer than d labels exist the new code is Gram-Schmidt
        orthogonalized against all previous ones (exact orthogonality); after
        that, the lowest-coherence of 256 hash candidates is kept.
        """
        if label in self._entries:
            return
        existing = [self.basis.T @ self._entries[l] for l in self._labels]
        if len(existing) < self.d:
            for attempt in range(64):
                v = self._candidate(label, attempt)
                for u in existing:
                    v = v - (v @ u) * u
                norm = np.linalg.norm(v)
                if norm > 1e-6:
                    code = v / norm
                    break
            else:  # pragma: no cover - hash candidates are generic
                raise RuntimeError(f"could not orthogonalize label {label!r}")
        else:
            mat = np.stack(existing)
            best, best_coh = None, np.inf
            for attempt in range(256):
                v = self._candidate(label, attempt)
                coh = np.max(np.abs(mat @ v))
                if coh < best_coh:
                    best, best_coh = v, coh
            code = best
        self._labels.append(label)
        self._entries[label] = self.basis @ code

    @classmethod
    def from_raw(cls, seed: int, d: int, D: int, basis: np.ndarray,
                 labels: list[str], entries: np.ndarray) -> "EmbeddingCodebook":
        """Rebuild from serialized arrays without re-deriving anything."""
        book = cls((), seed=seed, d=d, D=D)
        book.basis = np.ascontiguousarray(basis, dtype=np.float64).reshape(D, d)
        book._labels = list(labels)
        book._entries = {l: np.ascontiguousarray(entries[i], dtype=np.float64)
                         for i, l in enumerate(labels)}
        return book

    # -- queries --------------------------------------------------------------

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._entries

    def __len__(self) -> int:
        return len(self._labels)

    def entry(self, label: str) -> np.ndarray:
        """Unit D-vector for a known label."""
        if label not in self._entries:
            raise UnknownLabelError(label)
        return self._entries[label].copy()

    def entries_matrix(self) -> np.ndarray:
        """(n_labels, D) matrix of entries in insertion order."""
        if not self._labels:
            return np.zeros((0, self.D))
        return np.stack([self._entries[l] for l in self._labels])

    def encode(self, label: str) -> np.ndarray:
        """d-space code of a known label (the image of its D-vector)."""
        return self.basis.T @ self.entry(label)

    def decode(self, code: np.ndarray) -> np.ndarray:
        """Fixed linear lift d -> D; accepts (..., d) batches."""
        code = np.asarray(code, dtype=np.float64)
        return code @ self.basis.T if code.ndim > 1 else self.basis @ code

    def embed_text(self, text: str) -> np.ndarray:
        """Unit D-vector for arbitrary text.

        Known labels return their codebook entry; unknown text maps through
        the same hash construction (inside the preserved subspace) so
        open-vocabulary queries stay well-defined instead of erroring.
        """
        if text in self._entries:
            return self.entry(text)
        return self.basis @ self._candidate(text, 0)

    def max_coherence(self) -> float:
        """Largest pairwise |cosine| among entries (0.0 for fewer than 2)."""
        if len(self._labels) < 2:
            return 0.0
        mat = self.entries_matrix()
        gram = np.abs(mat @ mat.T)
        np.fill_diagonal(gram, 0.0)
        return float(gram.max())

    def equal(self, other: "EmbeddingCodebook") -> bool:
        return (self.seed == other.seed and self.d == other.d and self.D == other.D
                and self._labels == other._labels
                and np.array_equal(self.basis, other.basis)
                and all(np.array_equal(self._entries[l], other._entries[l])
                        for l in self._labels))
