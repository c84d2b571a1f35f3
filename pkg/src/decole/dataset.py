"""Data model, CSV ingestion, synthetic generation and label-noise injection."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DataError(ValueError):
    """Input data violates the dataset contract."""


class SpecError(ValueError):
    """A ClusterSpec / NoiseSpec / config value is invalid.

    ``field`` names the offending entry.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CsvParseError(DataError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class Instance:
    id: int
    features: tuple[float, ...]
    group_id: int
    observed_label: int
    gold_label: int | None = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable collection of instances.

    A dataset produced by ``generate_synthetic`` or ``load_csv`` has ids
    ``0..n-1``.  Views returned by :func:`subset_by_group` keep the ids of
    their parent, so they are unique but not contiguous.
    """

    features: np.ndarray
    group: np.ndarray
    observed: np.ndarray
    gold: np.ndarray | None = None
    ids: np.ndarray | None = None
    group_count: int = 1
    group_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError("features must be a 2-d array")
        n = X.shape[0]
        group = np.asarray(self.group, dtype=np.int64).reshape(-1)
        observed = np.asarray(self.observed, dtype=np.int64).reshape(-1)
        ids = (np.arange(n, dtype=np.int64) if self.ids is None
               else np.asarray(self.ids, dtype=np.int64).reshape(-1))
        for name, col in (("group", group), ("observed", observed), ("ids", ids)):
            if col.shape[0] != n:
                raise DataError(f"{name} has length {col.shape[0]}, expected {n}")
        if self.group_count < 1:
            raise DataError("group_count must be positive")
        if n and (group.min() < 0 or group.max() >= self.group_count):
            raise DataError(f"group ids must lie in [0, {self.group_count})")
        if not np.isin(observed, (0, 1)).all():
            raise DataError("observed labels must be 0 or 1")
        if np.unique(ids).size != n:
            raise DataError("instance ids must be unique")
        gold = None
        if self.gold is not None:
            gold = np.asarray(self.gold, dtype=np.int64).reshape(-1)
            if gold.shape[0] != n:
                raise DataError(f"gold has length {gold.shape[0]}, expected {n}")
            if not np.isin(gold, (0, 1)).all():
                raise DataError("gold labels must be 0 or 1")
        if self.group_names is not None and len(self.group_names) != self.group_count:
            raise DataError("group_names must have one entry per group")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names must have one entry per feature column")
        object.__setattr__(self, "features", _frozen(X.copy()))
        object.__setattr__(self, "group", _frozen(group.copy()))
        object.__setattr__(self, "observed", _frozen(observed.copy()))
        object.__setattr__(self, "ids", _frozen(ids.copy()))
        object.__setattr__(self, "gold", None if gold is None else _frozen(gold.copy()))
        if self.group_names is not None:
            object.__setattr__(self, "group_names", tuple(str(g) for g in self.group_names))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(str(f) for f in self.feature_names))

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def has_gold(self) -> bool:
        return self.gold is not None

    def column_names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j}" for j in range(self.feature_dim))

    def instance(self, i: int) -> Instance:
        """Instance at row position ``i`` (not id)."""
        return Instance(
            id=int(self.ids[i]),
            features=tuple(float(v) for v in self.features[i]),
            group_id=int(self.group[i]),
            observed_label=int(self.observed[i]),
            gold_label=None if self.gold is None else int(self.gold[i]),
        )

    def __iter__(self) -> Iterator[Instance]:
        return (self.instance(i) for i in range(len(self)))

    @property
    def instances(self) -> list[Instance]:
        return list(self)

    def mislabeled_mask(self) -> np.ndarray:
        if self.gold is None:
            raise DataError("gold labels are required")
        return self.observed != self.gold

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset (by position) that keeps ids and group metadata."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            features=self.features[rows],
            group=self.group[rows],
            observed=self.observed[rows],
            gold=None if self.gold is None else self.gold[rows],
            ids=self.ids[rows],
            group_count=self.group_count,
            group_names=self.group_names,
            feature_names=self.feature_names,
        )

    def with_observed(self, observed: np.ndarray) -> "Dataset":
        return Dataset(self.features, self.group, observed, self.gold, self.ids,
                       self.group_count, self.group_names, self.feature_names)

    def without_gold(self) -> "Dataset":
        return Dataset(self.features, self.group, self.observed, None, self.ids,
                       self.group_count, self.group_names, self.feature_names)

    def same_instances(self, other: "Dataset") -> bool:
        def eq(a, b):
            return (a is None and b is None) or (
                a is not None and b is not None and np.array_equal(a, b))
        return (
            self.feature_dim == other.feature_dim
            and self.group_count == other.group_count
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.group, other.group)
            and np.array_equal(self.observed, other.observed)
            and eq(self.gold, other.gold)
        )


def subset_by_group(dataset: Dataset, g: int) -> Dataset:
    if not 0 <= g < dataset.group_count:
        raise DataError(f"group {g} out of range [0, {dataset.group_count})")
    return dataset.take(np.flatnonzero(dataset.group == g))


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Group- and class-conditional flip rates.

    ``pi[c][g]`` is the probability that an instance of group ``g`` is observed
    with label ``c`` although its gold label is ``1 - c``: ``pi[0][g]`` is the
    false-negative rate, ``pi[1][g]`` the false-positive rate.
    """

    pi: tuple[tuple[float, ...], tuple[float, ...]]

    def __post_init__(self) -> None:
        rows = tuple(tuple(float(v) for v in row) for row in self.pi)
        if len(rows) != 2 or len(rows[0]) != len(rows[1]) or not rows[0]:
            raise SpecError("pi", "expected a 2 x K table indexed [class][group]")
        for c, row in enumerate(rows):
            for g, v in enumerate(row):
                if not (0.0 <= v < 1.0) or math.isnan(v):
                    raise SpecError(f"pi[{c}][{g}]", f"rate {v} outside [0, 1)")
        object.__setattr__(self, "pi", rows)

    @property
    def group_count(self) -> int:
        return len(self.pi[0])

    def rate(self, c: int, g: int) -> float:
        return self.pi[c][g]

    def max_rate(self) -> float:
        return max(max(row) for row in self.pi)

    @classmethod
    def zeros(cls, k: int) -> "NoiseSpec":
        return cls(((0.0,) * k, (0.0,) * k))

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        if "pi" not in d:
            raise SpecError("pi", "missing")
        return cls(tuple(tuple(r) for r in d["pi"]))

    def to_dict(self) -> dict:
        return {"pi": [list(r) for r in self.pi]}


@dataclass(frozen=True)
class ClusterSpec:
    """Gaussian cluster layout: one isotropic normal per (group, gold class).

    ``means[g][c]`` is the mean vector for group ``g`` and gold label ``c``.
    """

    n_total: int
    group_proportions: tuple[float, ...]
    class_balance_per_group: tuple[float, ...]
    means: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...]
    sigma: float

    def __post_init__(self) -> None:
        if isinstance(self.n_total, bool) or int(self.n_total) != self.n_total or self.n_total < 0:
            raise SpecError("n_total", f"must be a non-negative integer, got {self.n_total!r}")
        props = tuple(float(p) for p in self.group_proportions)
        k = len(props)
        if k == 0:
            raise SpecError("group_proportions", "must name at least one group")
        if any(p < 0 for p in props) or abs(sum(props) - 1.0) > 1e-9:
            raise SpecError("group_proportions", f"must be non-negative and sum to 1, got {props}")
        balance = tuple(float(b) for b in self.class_balance_per_group)
        if len(balance) != k:
            raise SpecError("class_balance_per_group", f"expected {k} entries")
        if any(not 0.0 < b < 1.0 for b in balance):
            raise SpecError("class_balance_per_group", "entries must lie in (0, 1)")
        try:
            means = tuple(tuple(tuple(float(v) for v in self.means[g][c]) for c in (0, 1))
                          for g in range(k))
        except (IndexError, TypeError) as exc:
            raise SpecError("means", "must give a mean vector for every (group, class)") from exc
        if len(self.means) != k:
            raise SpecError("means", f"expected {k} groups, got {len(self.means)}")
        dims = {len(m) for row in means for m in row}
        if len(dims) != 1 or 0 in dims:
            raise SpecError("means", "all mean vectors must share one positive length")
        sigma = float(self.sigma)
        if not sigma >= 0.0 or math.isinf(sigma):
            raise SpecError("sigma", f"must be a finite non-negative number, got {self.sigma}")
        object.__setattr__(self, "n_total", int(self.n_total))
        object.__setattr__(self, "group_proportions", props)
        object.__setattr__(self, "class_balance_per_group", balance)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigma", sigma)

    @property
    def group_count(self) -> int:
        return len(self.group_proportions)

    @property
    def feature_dim(self) -> int:
        return len(self.means[0][0])

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterSpec":
        missing = [f for f in ("n_total", "group_proportions", "class_balance_per_group",
                               "means", "sigma") if f not in d]
        if missing:
            raise SpecError(missing[0], "missing")
        return cls(d["n_total"], tuple(d["group_proportions"]),
                   tuple(d["class_balance_per_group"]), d["means"], d["sigma"])

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "group_proportions": list(self.group_proportions),
            "class_balance_per_group": list(self.class_balance_per_group),
            "means": [[list(m) for m in row] for row in self.means],
            "sigma": self.sigma,
        }


APPENDIX_MEANS = (((2.0, 3.0), (7.0, 4.0)), ((6.0, 3.0), (5.0, 7.0)))


def appendix_cluster(n_total: int = 10_000, minority: float = 0.3,
                     balance: float = 0.5, sigma: float = 1.2) -> ClusterSpec:
    """Four-cluster layout: two groups with nearly orthogonal class boundaries."""
    return ClusterSpec(n_total, (minority, 1.0 - minority), (balance, balance),
                       APPENDIX_MEANS, sigma)


def bias_noise(fn_g0: float, fp_g1: float, background: float = 0.05) -> NoiseSpec:
    """g0 suffers false negatives at ``fn_g0``, g1 false positives at ``fp_g1``."""
    return NoiseSpec(((fn_g0, background), (background, fp_g1)))


def load_spec_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(str(path), f"invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Generation and noise
# ---------------------------------------------------------------------------


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer apportionment of ``total`` by ``weights``; sums exactly to ``total``."""
    raw = [total * w for w in weights]
    base = [math.floor(r) for r in raw]
    short = total - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def generate_synthetic(spec: ClusterSpec, seed: int) -> Dataset:
    """Draw a clean dataset (observed == gold) from the cluster layout.

    Instances are ordered by group, then gold class 0 before class 1.
    """
    rng = np.random.default_rng(seed)
    dim = spec.feature_dim
    X_parts, g_parts, y_parts = [], [], []
    for g, n_g in enumerate(largest_remainder(spec.n_total, spec.group_proportions)):
        b = spec.class_balance_per_group[g]
        for c, n_c in enumerate(largest_remainder(n_g, (1.0 - b, b))):
            mean = np.asarray(spec.means[g][c])
            X_parts.append(mean + spec.sigma * rng.standard_normal((n_c, dim)))
            g_parts.append(np.full(n_c, g))
            y_parts.append(np.full(n_c, c))
    X = np.concatenate(X_parts) if X_parts else np.empty((0, dim))
    group = np.concatenate(g_parts).astype(np.int64)
    y = np.concatenate(y_parts).astype(np.int64)
    return Dataset(X.reshape(-1, dim), group, y, gold=y, group_count=spec.group_count)


def inject_noise(dataset: Dataset, noise: NoiseSpec, seed: int) -> Dataset:
    """Flip observed labels away from gold with probability ``pi[1 - gold][group]``."""
    if dataset.gold is None:
        raise DataError("inject_noise requires gold labels")
    if noise.group_count < dataset.group_count:
        raise SpecError("pi", f"covers {noise.group_count} groups, dataset has {dataset.group_count}")
    rates = np.asarray(noise.pi)
    flip_p = rates[1 - dataset.gold, dataset.group]
    u = np.random.default_rng(seed).random(len(dataset))
    observed = np.where(u < flip_p, 1 - dataset.gold, dataset.gold)
    return dataset.with_observed(observed)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    group: str = "group"
    observed: str = "observed"
    gold: str | None = "gold"
    features: tuple[str, ...] | None = None  # None: every other column


def _parse_label(raw: str, row: int, column: str) -> int:
    if raw.strip() not in ("0", "1"):
        raise CsvParseError(row, f"column {column!r}: label must be 0 or 1, got {raw!r}")
    return int(raw.strip())


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> Dataset:
    """Read a dataset.  Rows are numbered from 1 (first data row) in errors.

    Group values that are all non-negative integers are used directly as
    group ids (K = max + 1); any other group values are mapped to dense ids in order of first appearance.
    The gold column is optional: it is used when present.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(0, "file is empty (no header)") from None
        header = [h.strip() for h in header]
        for needed in (schema.group, schema.observed):
            if needed not in header:
                raise CsvParseError(0, f"missing column {needed!r}")
        has_gold = schema.gold is not None and schema.gold in header
        label_cols = {schema.group, schema.observed} | ({schema.gold} if has_gold else set())
        if schema.features is not None:
            for f in schema.features:
                if f not in header:
                    raise CsvParseError(0, f"missing column {f!r}")
            feat_cols = list(schema.features)
        else:
            feat_cols = [h for h in header if h not in label_cols]
        feat_idx = [header.index(f) for f in feat_cols]
        gi, oi = header.index(schema.group), header.index(schema.observed)
        gdi = header.index(schema.gold) if has_gold else None

        feats, groups_raw, observed, gold = [], [], [], []
        for row_no, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise CsvParseError(row_no, f"expected {len(header)} fields, got {len(rec)}")
            vals = []
            for j, name in zip(feat_idx, feat_cols):
                try:
                    v = float(rec[j])
                except ValueError:
                    raise CsvParseError(row_no, f"column {name!r}: non-numeric value {rec[j]!r}") from None
                if not math.isfinite(v):
                    raise CsvParseError(row_no, f"column {name!r}: non-finite value {rec[j]!r}")
                vals.append(v)
            feats.append(vals)
            groups_raw.append(rec[gi].strip())
            observed.append(_parse_label(rec[oi], row_no, schema.observed))
            if gdi is not None:
                gold.append(_parse_label(rec[gdi], row_no, schema.gold))

    if groups_raw and all(g.isdigit() for g in groups_raw):
        group = [int(g) for g in groups_raw]
        k = max(group) + 1
        names = None
    else:
        names_map: dict[str, int] = {}
        for g in groups_raw:
            names_map.setdefault(g, len(names_map))
        group = [names_map[g] for g in groups_raw]
        k = max(len(names_map), 1)
        names = tuple(names_map) if names_map else None
    X = np.asarray(feats, dtype=np.float64).reshape(len(feats), len(feat_cols))
    return Dataset(X, group, observed, gold=gold if gdi is not None else None,
                   group_count=k, group_names=names, feature_names=tuple(feat_cols))


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` in the layout :func:`load_csv` reads back.

    Floats are written with ``repr`` (shortest round-tripping form).
    """
    if not np.array_equal(dataset.ids, np.arange(len(dataset))):
        raise DataError("only datasets with ids 0..n-1 can be saved; re-index views first")
    cols = list(dataset.column_names())
    header = cols + ["group", "observed"] + (["gold"] if dataset.has_gold else [])
    clash = set(cols) & {"group", "observed", "gold"}
    if clash:
        raise DataError(f"feature names clash with label columns: {sorted(clash)}")
    names = dataset.group_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            g = int(dataset.group[i])
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [names[g] if names else str(g), str(int(dataset.observed[i]))]
            if dataset.has_gold:
                row.append(str(int(dataset.gold[i])))
            w.writerow(row)
