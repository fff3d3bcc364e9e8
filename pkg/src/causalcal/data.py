"""Immutable data model: observations, datasets, fold assignments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidArgumentError
from .rng import SeedStream

BINARY = "binary"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class Observation:
    """One experimental record.

    ``a`` is the treatment column.  ``d`` is the optional secondary binary
    column used by local-effect losses: the randomized assignment when the
    assignment propensity is known, or the instrument in the IV pathway.
    """

    x: np.ndarray
    a: float
    y: float
    d: float | None = None


@dataclass(frozen=True)
class DatasetSchema:
    dim: int
    treatment_kind: str = BINARY
    has_aux: bool = False
    has_base: bool = False


def _check_binary(values: np.ndarray, name: str) -> None:
    if not np.all((values == 0.0) | (values == 1.0)):
        bad = int(np.argmax(~((values == 0.0) | (values == 1.0))))
        raise DataError(f"{name} must be exactly 0 or 1; row {bad} has {values[bad]!r}")


class Dataset:
    """Column-ordered collection of observations.

    Arrays are defensively copied and marked read-only; a Dataset is safe
    to share across threads.
    """

    def __init__(
        self,
        X: np.ndarray,
        a: np.ndarray,
        y: np.ndarray,
        d: np.ndarray | None = None,
        base: np.ndarray | None = None,
        treatment_kind: str = BINARY,
    ):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        a = np.asarray(a, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        n = X.shape[0]
        if a.shape[0] != n or y.shape[0] != n:
            raise DataError(f"column lengths disagree: X has {n} rows, a {a.shape[0]}, y {y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("outcomes contain non-finite values")
        if treatment_kind == BINARY:
            _check_binary(a, "treatment")
        elif treatment_kind == CONTINUOUS:
            if np.any((a < 0.0) | (a > 1.0) | ~np.isfinite(a)):
                bad = int(np.argmax((a < 0.0) | (a > 1.0) | ~np.isfinite(a)))
                raise DataError(f"continuous treatment must lie in [0, 1]; row {bad} has {a[bad]!r}")
        else:
            raise InvalidArgumentError(f"unknown treatment kind {treatment_kind!r}")
        if d is not None:
            d = np.asarray(d, dtype=np.float64).ravel()
            if d.shape[0] != n:
                raise DataError("auxiliary treatment column length mismatch")
            _check_binary(d, "auxiliary treatment")
        if base is not None:
            base = np.asarray(base, dtype=np.float64).ravel()
            if base.shape[0] != n:
                raise DataError("base prediction column length mismatch")
            if not np.all(np.isfinite(base)):
                raise DataError("base predictions contain non-finite values")
        for arr in (X, a, y, d, base):
            if arr is not None:
                arr.flags.writeable = False
        self.X = X
        self.a = a
        self.y = y
        self.d = d
        self.base = base
        self.schema = DatasetSchema(
            dim=X.shape[1],
            treatment_kind=treatment_kind,
            has_aux=d is not None,
            has_base=base is not None,
        )

    def __len__(self) -> int:
        return self.X.shape[0]

    def row(self, i: int) -> Observation:
        return Observation(
            x=self.X[i],
            a=float(self.a[i]),
            y=float(self.y[i]),
            d=float(self.d[i]) if self.d is not None else None,
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx],
            self.a[idx],
            self.y[idx],
            d=self.d[idx] if self.d is not None else None,
            base=self.base[idx] if self.base is not None else None,
            treatment_kind=self.schema.treatment_kind,
        )

    def with_base(self, base: np.ndarray) -> "Dataset":
        return Dataset(self.X, self.a, self.y, d=self.d, base=base,
                       treatment_kind=self.schema.treatment_kind)

    def require_base(self) -> np.ndarray:
        if self.base is None:
            raise InvalidArgumentError("dataset has no base-prediction column")
        return self.base


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of {0..n-1} into K folds whose sizes differ by at most 1."""

    n: int
    K: int
    fold_of: np.ndarray = field(repr=False)

    def indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of == k)[0]

    def complement(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of != k)[0]

    def sizes(self) -> list[int]:
        return [int(np.sum(self.fold_of == k)) for k in range(self.K)]


def split_folds(n: int, K: int, seed: SeedStream) -> FoldAssignment:
    """Uniformly random K-fold partition, deterministic given the seed.

    The shuffled index vector is dealt into contiguous blocks; the first
    ``n mod K`` folds receive the extra point.
    """
    if K == 0 or K > n:
        raise InvalidArgumentError(f"fold count must satisfy 1 <= K <= n, got K={K}, n={n}")
    perm = seed.rng().permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    sizes = [n // K + (1 if k < n % K else 0) for k in range(K)]
    start = 0
    for k, size in enumerate(sizes):
        fold_of[perm[start:start + size]] = k
        start += size
    fold_of.flags.writeable = False
    return FoldAssignment(n=n, K=K, fold_of=fold_of)
