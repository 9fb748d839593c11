"""Observed datasets ``(x, combination, y)`` and their CSV form.

CSV layout: a header row, covariate columns ``x1..xp``, the combination as a
bitmask integer column ``combo`` and the outcome column ``y``.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError
from .treatments import TreatmentSpace

_XCOL = re.compile(r"^x(\d+)$")


@dataclass
class Dataset:
    X: np.ndarray
    idx: np.ndarray
    y: np.ndarray
    space: TreatmentSpace

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.idx = np.asarray(self.idx, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = self.X.shape[0]
        if self.idx.shape != (n,) or self.y.shape != (n,):
            raise DataError("X, combinations and outcomes must have the same number of rows")
        if n and (self.idx.min() < 0 or self.idx.max() >= len(self.space)):
            raise DomainError("combination index outside the treatment space")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def masks(self):
        return np.array(self.space.masks, dtype=np.int64)[self.idx]

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.idx[rows], self.y[rows], self.space)

    def split(self, frac, seed=0):
        """Random disjoint (first, second) split with ``frac`` of rows in the first."""
        perm = np.random.default_rng(seed).permutation(self.n)
        k = int(round(frac * self.n))
        return self.subset(np.sort(perm[:k])), self.subset(np.sort(perm[k:]))

    @classmethod
    def from_sim(cls, sample):
        return cls(sample.X, sample.idx, sample.y, sample.setting.space)


def _fmt(v):
    return repr(float(v))


def dataset_to_csv(data, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(data.p)] + ["combo", "y"])
    masks = data.masks
    for i in range(data.n):
        w.writerow([_fmt(v) for v in data.X[i]] + [int(masks[i]), _fmt(data.y[i])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_dataset_csv(path, space=None, K=None):
    """Parse a dataset CSV. Without ``space`` the admissible set is the
    sorted set of observed bitmasks, over ``K`` bits (default: smallest
    ``K`` that fits)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for col in ("combo", "y"):
        if col not in header:
            raise DataError(f"{path}: missing required column {col!r}")
    xcols = sorted(((int(m.group(1)), i) for i, h in enumerate(header) if (m := _XCOL.match(h))))
    if not xcols:
        raise DataError(f"{path}: no covariate columns x1..xp")
    if [j for j, _ in xcols] != list(range(1, len(xcols) + 1)):
        raise DataError(f"{path}: covariate columns must be x1..x{len(xcols)} without gaps")
    ci, yi = header.index("combo"), header.index("y")
    X, masks, y = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            X.append([float(row[i]) for _, i in xcols])
            masks.append(int(row[ci]))
            y.append(float(row[yi]))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    if not X:
        raise DataError(f"{path}: no data rows")
    X = np.array(X)
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DataError(f"{path}: non-finite values")
    masks = np.array(masks, dtype=np.int64)
    if space is None:
        if K is None:
            K = max(1, int(masks.max()).bit_length())
        space = TreatmentSpace(K, sorted(set(masks.tolist())), warn_missing_null=False)
    for m in np.unique(masks):
        if int(m) not in space:
            raise DomainError(f"{path}: combination {int(m)} is not in the treatment space")
    return Dataset(X, space.indices(masks), np.array(y), space)
