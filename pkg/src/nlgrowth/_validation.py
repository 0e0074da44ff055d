"""Input-validation helpers shared by the estimator API."""
from __future__ import annotations

import os
from typing import Iterable

import numpy as np
from sklearn.exceptions import NotFittedError

from .dataset import LongitudinalDataset, load_wide_csv
from .model_builder import ModelSpec


def check_dataset(X, spec: ModelSpec, id_column: str | None = None) -> LongitudinalDataset:
    """Coerce ``X`` into a dataset carrying the roles ``spec`` needs.

    Accepts a :class:`LongitudinalDataset`, a path to a wide CSV file or a
    pandas ``DataFrame`` (anything with ``columns`` and ``__getitem__``).
    """
    roles = spec.roles()
    if isinstance(X, LongitudinalDataset):
        return X if X.roles == roles else X.with_roles(roles)
    if isinstance(X, (str, os.PathLike)):
        return load_wide_csv(X, roles, id_column=id_column)
    if hasattr(X, "columns"):
        return LongitudinalDataset.from_frame(X, roles, id_column=id_column)
    raise TypeError(f"expected a LongitudinalDataset, a CSV path or a DataFrame, got {type(X).__name__}")


def check_records(records) -> tuple[int, ...]:
    """Sorted, unique, positive wave indices."""
    rec = tuple(int(r) for r in np.atleast_1d(records))
    if not rec:
        raise ValueError("records must not be empty")
    if any(r < 1 for r in rec):
        raise ValueError("wave indices are 1-based")
    if list(rec) != sorted(set(rec)):
        raise ValueError("wave indices must be strictly increasing")
    return rec


def check_names(names: Iterable[str] | str | None) -> tuple[str, ...]:
    if names is None:
        return ()
    if isinstance(names, str):
        return (names,)
    out = tuple(str(n) for n in names)
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate names in {out}")
    return out


def check_fitted(estimator, attribute: str = "fit_result_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
