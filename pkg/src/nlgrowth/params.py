"""Named parameter vectors with role metadata.

A :class:`ParameterSet` stores parameters on their natural scale.  The
optimizer works on an unconstrained internal vector in which
positivity-constrained entries (Cholesky diagonals, residual variances)
appear as logarithms.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Mapping

import numpy as np

from .exceptions import IncompleteParameterSet

ROLES = (
    "mean", "chol", "residual", "shape", "rate", "tic_coef", "tvc", "path", "logit", "tic_mean", "res_chol",
)


@dataclass(frozen=True)
class Parameter:
    name: str
    value: float
    role: str
    free: bool = True
    positive: bool = False
    tie: str | None = None  # copy the value of another parameter


class ParameterSet:
    """Ordered mapping ``name -> Parameter``."""

    def __init__(self, entries: Iterable[Parameter] = ()):
        self._entries: dict[str, Parameter] = {}
        for p in entries:
            self._put(p)

    def _put(self, p: Parameter):
        if p.role not in ROLES:
            raise ValueError(f"unknown role {p.role!r} for {p.name}")
        self._entries[p.name] = p

    def add(self, name: str, value: float, role: str, *, free: bool = True,
            positive: bool = False, tie: str | None = None) -> "ParameterSet":
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._put(Parameter(name, float(value), role, free, positive, tie))
        return self

    # -- mapping protocol -------------------------------------------------
    def __contains__(self, name) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, name: str) -> float:
        p = self.entry(name)
        if p.tie is not None:
            return self[p.tie]
        return p.value

    def entry(self, name: str) -> Parameter:
        try:
            return self._entries[name]
        except KeyError:
            raise IncompleteParameterSet(name) from None

    def entries(self) -> list[Parameter]:
        return list(self._entries.values())

    def values(self) -> dict[str, float]:
        return {n: self[n] for n in self._entries}

    def __repr__(self):
        body = ", ".join(f"{n}={self[n]:.4g}" for n in self._entries)
        return f"ParameterSet({body})"

    def __eq__(self, other):
        return isinstance(other, ParameterSet) and self.entries() == other.entries()

    # -- editing ----------------------------------------------------------
    def copy(self) -> "ParameterSet":
        return ParameterSet(self._entries.values())

    def set(self, name: str, value: float) -> "ParameterSet":
        self._entries[name] = replace(self.entry(name), value=float(value))
        return self

    def update(self, values: Mapping[str, float]) -> "ParameterSet":
        for n, v in values.items():
            if n in self._entries:
                self.set(n, v)
        return self

    def fix(self, name: str, value: float | None = None) -> "ParameterSet":
        p = self.entry(name)
        self._entries[name] = replace(p, free=False, value=p.value if value is None else float(value))
        return self

    def tie(self, name: str, target: str) -> "ParameterSet":
        self.entry(target)
        self._entries[name] = replace(self.entry(name), tie=target)
        return self

    # -- free vector ------------------------------------------------------
    @property
    def free_names(self) -> list[str]:
        return [p.name for p in self._entries.values() if p.free and p.tie is None]

    @property
    def n_free(self) -> int:
        return len(self.free_names)

    def positive_mask(self) -> np.ndarray:
        return np.array([self._entries[n].positive for n in self.free_names], dtype=bool)

    def free_vector(self, internal: bool = False) -> np.ndarray:
        x = np.array([self._entries[n].value for n in self.free_names], dtype=float)
        if internal:
            pos = self.positive_mask()
            x[pos] = np.log(x[pos])
        return x

    def with_free_vector(self, x, internal: bool = False) -> "ParameterSet":
        x = np.asarray(x, dtype=float)
        names = self.free_names
        if x.shape != (len(names),):
            raise ValueError(f"expected {len(names)} free values, got shape {x.shape}")
        if internal:
            x = x.copy()
            pos = self.positive_mask()
            x[pos] = np.exp(x[pos])
        out = self.copy()
        for n, v in zip(names, x):
            out._entries[n] = replace(out._entries[n], value=float(v))
        return out

    # -- slicing ----------------------------------------------------------
    def slice(self, prefix: str) -> "ParameterSet":
        """Entries whose name starts with ``prefix``, with the prefix removed."""
        out = ParameterSet()
        for p in self._entries.values():
            if p.name.startswith(prefix):
                tie = p.tie[len(prefix):] if p.tie and p.tie.startswith(prefix) else None
                value = self[p.name]
                out._put(replace(p, name=p.name[len(prefix):], tie=tie, value=value))
        return out

    def prefixed(self, prefix: str) -> "ParameterSet":
        return ParameterSet(replace(p, name=prefix + p.name, tie=(prefix + p.tie) if p.tie else None)
                            for p in self._entries.values())

    @classmethod
    def concat(cls, *sets: "ParameterSet") -> "ParameterSet":
        out = cls()
        for s in sets:
            for p in s.entries():
                if p.name in out:
                    raise ValueError(f"duplicate parameter name {p.name!r}")
                out._put(p)
        return out

    # -- serialisation ----------------------------------------------------
    def to_records(self) -> list[dict]:
        return [
            {"name": p.name, "value": p.value, "role": p.role, "free": p.free,
             "positive": p.positive, "tie": p.tie}
            for p in self._entries.values()
        ]

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "ParameterSet":
        return cls(Parameter(r["name"], float(r["value"]), r["role"], bool(r.get("free", True)),
                             bool(r.get("positive", False)), r.get("tie")) for r in records)


def chol_names(block: str, size: int) -> list[tuple[str, int, int]]:
    """Lower-triangular Cholesky entry names of a covariance block."""
    return [(f"{block}.chol.{i}.{j}", i, j) for i in range(size) for j in range(i + 1)]


def chol_from_values(values: Mapping[str, float], block: str, size: int) -> np.ndarray:
    L = np.zeros((size, size))
    for name, i, j in chol_names(block, size):
        L[i, j] = values[name]
    return L


def add_cov_block(ps: ParameterSet, block: str, cov: np.ndarray, role: str = "chol") -> ParameterSet:
    """Add Cholesky entries of ``cov`` (must be positive definite) under ``block``."""
    cov = np.asarray(cov, dtype=float)
    L = safe_cholesky(cov)
    for name, i, j in chol_names(block, cov.shape[0]):
        ps.add(name, L[i, j], role, positive=(i == j))
    return ps


def set_cov_block(ps: ParameterSet, block: str, cov: np.ndarray) -> ParameterSet:
    L = safe_cholesky(np.asarray(cov, dtype=float))
    for name, i, j in chol_names(block, L.shape[0]):
        ps.set(name, L[i, j])
    return ps


def safe_cholesky(cov: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Cholesky factor of the nearest matrix with eigenvalues at least ``floor * scale``."""
    cov = 0.5 * (cov + cov.T)
    try:
        L = np.linalg.cholesky(cov)
        if np.all(np.diag(L) > 0):
            return L
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(w))), 1.0)
    w = np.maximum(w, floor * scale)
    return np.linalg.cholesky((V * w) @ V.T)
