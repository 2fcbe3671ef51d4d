"""Resource accounting shared by the rest of the package.

A block's usage is ``y = A x`` where column ``j`` of ``A`` is the resource
vector of transaction ``j`` and ``x`` is the 0/1 inclusion vector.  Rows of
``A`` are described by :class:`Row`; a row may carry a hard limit, a target,
and a ``priced`` flag.  Prices, targets and residuals live on priced rows
only, while limits apply to every row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

ATOL = 1e-9


class InputError(ValueError):
    """Malformed or dimensionally inconsistent input."""


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Row:
    name: str
    limit: float | None = None
    target: float | None = None
    priced: bool = False
    # weights over the base rows; set for composite rows such as y1 + 10 y2
    combination: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.limit is not None and self.limit < 0:
            raise InputError(f"row {self.name!r}: limit must be >= 0, got {self.limit}")
        if self.priced and self.target is None:
            raise InputError(f"row {self.name!r}: priced rows need a target")
        if self.combination is not None:
            object.__setattr__(self, "combination", tuple(float(w) for w in self.combination))


@dataclass(frozen=True)
class ResourceModel:
    rows: tuple[Row, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        if not rows:
            raise InputError("a resource model needs at least one row")
        names = [r.name for r in rows]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate row names: {names}")
        nbase = len(self.base_indices)
        for r in rows:
            if r.combination is not None and len(r.combination) != nbase:
                raise InputError(
                    f"row {r.name!r}: combination has {len(r.combination)} weights, "
                    f"model has {nbase} base rows"
                )

    @property
    def num_resources(self) -> int:
        return len(self.rows)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rows]

    @property
    def base_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.rows) if r.combination is None]

    @property
    def composite_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.rows) if r.combination is not None]

    @property
    def priced_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.rows) if r.priced]

    @property
    def priced_names(self) -> list[str]:
        return [self.rows[i].name for i in self.priced_indices]

    @property
    def targets(self) -> np.ndarray:
        """Targets ``b*`` over the priced rows."""
        return np.array([self.rows[i].target for i in self.priced_indices], dtype=float)

    @property
    def limits(self) -> np.ndarray:
        """Limits over all rows, ``inf`` where a row has none."""
        return np.array([np.inf if r.limit is None else r.limit for r in self.rows], dtype=float)

    def index(self, name: str) -> int:
        for i, r in enumerate(self.rows):
            if r.name == name:
                return i
        raise KeyError(name)

    def expand(self, base) -> np.ndarray:
        """Full resource column from the base-row amounts (composite rows filled in)."""
        base = np.asarray(base, dtype=float)
        bidx = self.base_indices
        if base.shape != (len(bidx),):
            raise InputError(f"expected {len(bidx)} base resource amounts, got shape {base.shape}")
        col = np.empty(self.num_resources)
        col[bidx] = base
        for i in self.composite_indices:
            col[i] = float(np.dot(self.rows[i].combination, base))
        return col

    def replace_rows(self, rows: Sequence[Row]) -> "ResourceModel":
        return ResourceModel(tuple(rows))


@dataclass(frozen=True)
class Transaction:
    id: Hashable
    resources: np.ndarray
    utility: float = 0.0

    def __post_init__(self):
        res = _frozen(self.resources)
        if res.ndim != 1:
            raise InputError(f"transaction {self.id!r}: resources must be a vector")
        if np.any(res < 0) or not np.all(np.isfinite(res)):
            raise InputError(f"transaction {self.id!r}: resources must be finite and >= 0")
        object.__setattr__(self, "resources", res)
        object.__setattr__(self, "utility", float(self.utility))

    def __eq__(self, other):
        if not isinstance(other, Transaction):
            return NotImplemented
        return (
            self.id == other.id
            and self.utility == other.utility
            and np.array_equal(self.resources, other.resources)
        )

    def __hash__(self):
        return hash((self.id, self.utility, self.resources.tobytes()))


@dataclass(frozen=True)
class Bundle:
    """0/1 inclusion vector over an ordered list of transactions."""

    included: np.ndarray = field(default_factory=lambda: _frozen([], dtype=bool))

    def __post_init__(self):
        arr = np.asarray(self.included)
        if arr.dtype != bool:
            if arr.size and not np.all((arr == 0) | (arr == 1)):
                raise InputError("bundle entries must be exactly 0 or 1")
            arr = arr.astype(bool)
        object.__setattr__(self, "included", _frozen(arr, dtype=bool))

    @classmethod
    def from_indices(cls, n: int, indices) -> "Bundle":
        x = np.zeros(n, dtype=bool)
        x[list(indices)] = True
        return cls(x)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.included))

    @property
    def size(self) -> int:
        return int(self.included.sum())

    def __len__(self):
        return len(self.included)

    def __eq__(self, other):
        if not isinstance(other, Bundle):
            return NotImplemented
        return np.array_equal(self.included, other.included)

    def __hash__(self):
        return hash(self.included.tobytes())


def resource_matrix(model: ResourceModel, txs: Sequence[Transaction]) -> np.ndarray:
    """The ``m x n`` matrix ``A`` with one column per transaction."""
    m = model.num_resources
    if not txs:
        return np.zeros((m, 0))
    for tx in txs:
        if tx.resources.shape != (m,):
            raise InputError(
                f"transaction {tx.id!r} has {tx.resources.shape[0]} resource entries, model has {m}"
            )
    return np.column_stack([tx.resources for tx in txs])


def usage(model: ResourceModel, txs: Sequence[Transaction], x) -> np.ndarray:
    """Total consumed resources ``y = A x``."""
    inc = x.included if isinstance(x, Bundle) else np.asarray(x)
    if inc.shape != (len(txs),):
        raise InputError(f"bundle has length {inc.shape}, expected {len(txs)}")
    A = resource_matrix(model, txs)
    return A @ inc.astype(float)


def residual(y, targets) -> np.ndarray:
    """``y - b*`` on the priced rows."""
    y = np.asarray(y, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if y.shape != targets.shape:
        raise InputError(f"usage shape {y.shape} does not match targets shape {targets.shape}")
    return y - targets


def priced_usage(model: ResourceModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.num_resources:
        raise InputError(f"usage has {y.shape[-1]} entries, model has {model.num_resources}")
    return y[..., model.priced_indices]


def is_feasible(model: ResourceModel, y, atol: float = ATOL) -> bool:
    """True iff ``y_i <= b_i`` on every limited row (boundary inclusive)."""
    y = np.asarray(y, dtype=float)
    if y.shape != (model.num_resources,):
        raise InputError(f"usage has shape {y.shape}, model has {model.num_resources} rows")
    return bool(np.all(y <= model.limits + atol))


def composite_model(
    base: Sequence[Row],
    composites: Sequence[tuple[str, Sequence[float], float | None]] = (),
) -> ResourceModel:
    """Build a model from base rows plus composite rows ``(name, weights, limit)``.

    Composite rows are limit-only (unpriced).
    """
    rows = list(base)
    for name, weights, limit in composites:
        rows.append(Row(name=name, limit=limit, combination=tuple(weights)))
    return ResourceModel(tuple(rows))


def row_from_spec(spec: dict) -> Row:
    if "name" not in spec:
        raise InputError(f"resource row {spec!r} has no name")
    limit = spec.get("limit")
    target = spec.get("target")
    comb = spec.get("combination")
    return Row(
        name=str(spec["name"]),
        limit=None if limit is None else float(limit),
        target=None if target is None else float(target),
        priced=bool(spec.get("priced", target is not None and comb is None)),
        combination=None if comb is None else tuple(float(w) for w in comb),
    )


def model_from_spec(rows: Sequence[dict]) -> ResourceModel:
    """``[{"name": "r1", "limit": 50, "target": 10, "priced": true}, ...]``."""
    return ResourceModel(tuple(row_from_spec(r) for r in rows))


def model_to_spec(model: ResourceModel) -> list[dict]:
    out = []
    for r in model.rows:
        d: dict = {"name": r.name, "priced": r.priced}
        if r.limit is not None:
            d["limit"] = r.limit
        if r.target is not None:
            d["target"] = r.target
        if r.combination is not None:
            d["combination"] = list(r.combination)
        out.append(d)
    return out
