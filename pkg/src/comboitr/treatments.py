"""Combination treatments as bitmasks over ``K`` individual treatments.

A combination ``(A^1, ..., A^K)`` is stored as the integer whose binary digits,
most significant first, are ``A^1 ... A^K``; ``(1, 0, 1)`` is ``0b101 == 5``.
With this convention the usual tabulated order of combinations is ascending
bitmask order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

MAX_K = 20


def bits_to_mask(bits):
    mask = 0
    for b in bits:
        if b not in (0, 1, True, False):
            raise DomainError(f"treatment indicators must be 0/1, got {bits}")
        mask = (mask << 1) | int(b)
    return mask


def mask_to_bits(mask, K):
    return tuple((int(mask) >> (K - 1 - k)) & 1 for k in range(K))


def popcount(mask):
    return bin(int(mask)).count("1")


@dataclass(frozen=True)
class TreatmentCombo:
    mask: int
    index: int
    K: int

    @property
    def bits(self):
        return mask_to_bits(self.mask, self.K)

    @property
    def size(self):
        return popcount(self.mask)


class TreatmentSpace:
    """Ordered admissible set of combinations."""

    def __init__(self, K, masks, warn_missing_null=True):
        K = int(K)
        if not 1 <= K <= MAX_K:
            raise ConfigError(f"K must be in 1..{MAX_K}, got {K}")
        masks = [int(m) for m in masks]
        if not masks:
            raise ConfigError("treatment space needs at least one combination")
        if len(set(masks)) != len(masks):
            raise ConfigError("duplicate combinations in treatment space")
        for m in masks:
            if m < 0 or m >> K:
                raise ConfigError(f"bitmask {m} uses bits beyond K={K}")
        self.K = K
        self.masks = tuple(masks)
        self._index = {m: i for i, m in enumerate(masks)}
        self.bits = np.array([mask_to_bits(m, K) for m in masks], dtype=np.float64)
        self.sizes = self.bits.sum(axis=1).astype(int)
        if warn_missing_null and 0 not in self._index:
            warnings.warn("treatment space has no all-zero combination", stacklevel=2)

    @classmethod
    def full(cls, K):
        return cls(K, range(2**K))

    @classmethod
    def from_bits(cls, rows, **kw):
        rows = [tuple(r) for r in rows]
        return cls(len(rows[0]), [bits_to_mask(r) for r in rows], **kw)

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        for i, m in enumerate(self.masks):
            yield TreatmentCombo(m, i, self.K)

    def __contains__(self, mask):
        return int(mask) in self._index

    def __eq__(self, other):
        return isinstance(other, TreatmentSpace) and (self.K, self.masks) == (other.K, other.masks)

    def __repr__(self):
        return f"TreatmentSpace(K={self.K}, masks={list(self.masks)})"

    def index(self, mask):
        try:
            return self._index[int(mask)]
        except KeyError:
            raise DomainError(f"combination {mask} is not admissible") from None

    def indices(self, masks):
        return np.array([self.index(m) for m in np.asarray(masks).ravel()], dtype=np.int64)

    def combo(self, index):
        return TreatmentCombo(self.masks[index], index, self.K)

    def costs(self, unit_costs):
        """Per-combination cost ``a^T c``."""
        c = np.asarray(unit_costs, dtype=np.float64)
        if c.shape != (self.K,):
            raise ConfigError(f"expected {self.K} unit costs, got {c.shape}")
        if np.any(c < 0):
            raise ConfigError("unit costs must be non-negative")
        return self.bits @ c

    def to_dict(self):
        return {"K": self.K, "masks": list(self.masks)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["K"], d["masks"], warn_missing_null=False)


def interaction_allowed(combo):
    """True iff the combination has at least two active treatments."""
    mask = combo.mask if isinstance(combo, TreatmentCombo) else int(combo)
    return popcount(mask) >= 2
