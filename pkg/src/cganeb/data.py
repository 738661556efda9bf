"""Site/crash tables: CSV ingestion, validation, normalisation, design matrices."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

PERIODS = ("P1", "P2")
WIDTHS = ("lsw1", "lsw2", "rsw1", "rsw2")
# Order of the generator/discriminator feature vector.
FEATURES = ("length_mi", "aadt", "lsw1", "lsw2", "rsw1", "rsw2", "mw", "terrain")
TERRAIN_CODES = {"level": 0, "rolling": 1}
UNDEFINED = "undefined"


class DataError(ValueError):
    """Invalid input table or record."""


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    length_mi: float
    aadt: Mapping[str, float]
    lsw1: float
    lsw2: float
    rsw1: float
    rsw2: float
    mw: float
    terrain: str
    crashes: Mapping[str, int]

    def __post_init__(self):
        if not self.length_mi > 0:
            raise DataError(f"site {self.site_id}: length_mi must be > 0")
        for p, v in self.aadt.items():
            if not v > 0:
                raise DataError(f"site {self.site_id}: aadt for {p} must be > 0")
        for name in WIDTHS:
            if not getattr(self, name) >= 0:
                raise DataError(f"site {self.site_id}: {name} must be >= 0")
        if not self.mw > 0:
            raise DataError(f"site {self.site_id}: mw must be > 0")
        if self.terrain not in TERRAIN_CODES:
            raise DataError(f"site {self.site_id}: terrain must be level or rolling")
        for p, c in self.crashes.items():
            if int(c) != c or c < 0:
                raise DataError(f"site {self.site_id}: crash count for {p} must be a nonnegative integer")

    def aadt_for(self, period: str, mode: str = "period") -> float:
        """AADT for ``period``; ``mode="mean"`` averages over all periods."""
        if mode == "mean":
            return float(np.mean(list(self.aadt.values())))
        if mode != "period":
            raise ValueError(f"unknown aadt mode {mode!r}")
        try:
            return self.aadt[period]
        except KeyError:
            raise DataError(f"site {self.site_id}: no AADT for period {period!r}") from None

    def feature(self, name: str, period: str, aadt_mode: str = "period") -> float:
        if name == "aadt":
            return self.aadt_for(period, aadt_mode)
        if name == "terrain":
            return float(TERRAIN_CODES[self.terrain])
        return float(getattr(self, name))


@dataclass(frozen=True)
class SiteTable:
    records: tuple[SiteRecord, ...]
    period_ids: tuple[str, ...] = PERIODS

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "period_ids", tuple(self.period_ids))
        seen = set()
        for r in self.records:
            if r.site_id in seen:
                raise DataError(f"duplicate site_id {r.site_id!r}")
            seen.add(r.site_id)
            for p in self.period_ids:
                if p not in r.crashes or p not in r.aadt:
                    raise DataError(f"site {r.site_id}: missing data for period {p}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def check_period(self, period: str) -> None:
        if period not in self.period_ids:
            raise DataError(f"unknown period {period!r}; table has {list(self.period_ids)}")

    @property
    def site_ids(self) -> list[str]:
        return [r.site_id for r in self.records]

    def column(self, name: str, period: str | None = None, aadt_mode: str = "period") -> np.ndarray:
        """Per-site values of a feature or of ``crashes`` for a period.

        With ``period=None`` AADT is averaged and crashes are summed over periods.
        """
        if name == "crashes":
            if period is None:
                return np.array([sum(r.crashes[p] for p in self.period_ids) for r in self.records],
                                dtype=np.float64)
            self.check_period(period)
            return np.array([r.crashes[period] for r in self.records], dtype=np.float64)
        if period is None:
            period, aadt_mode = self.period_ids[0], "mean"
        return np.array([r.feature(name, period, aadt_mode) for r in self.records], dtype=np.float64)

    def counts(self, period: str) -> np.ndarray:
        return self.column("crashes", period)

    def lengths(self) -> np.ndarray:
        return self.column("length_mi")

    def subset(self, site_ids: Sequence[str]) -> SiteTable:
        index = {r.site_id: r for r in self.records}
        return SiteTable(tuple(index[s] for s in site_ids), self.period_ids)


# -- CSV ---------------------------------------------------------------------

def default_schema(period_ids: Sequence[str] = PERIODS) -> dict:
    schema = {name: name for name in ("site_id", "length_mi", *WIDTHS, "mw", "terrain")}
    schema["aadt"] = {p: f"aadt_{p.lower()}" for p in period_ids}
    schema["crashes"] = {p: f"crashes_{p.lower()}" for p in period_ids}
    return schema


def load_schema(path: str | Path) -> dict:
    """Column mapping from a JSON file, filled in with the canonical defaults.

    ``aadt`` entries may name one column or a list of annual columns, which
    are averaged.
    """
    with open(path, encoding="utf-8") as fh:
        user = json.load(fh)
    periods = tuple(user.get("crashes", {}).keys()) or PERIODS
    schema = default_schema(periods)
    schema.update(user)
    return schema


def _required_columns(schema: Mapping) -> list[str]:
    cols = [schema[k] for k in ("site_id", "length_mi", *WIDTHS, "mw", "terrain")]
    for spec in schema["aadt"].values():
        cols.extend([spec] if isinstance(spec, str) else spec)
    cols.extend(schema["crashes"].values())
    return cols


def load_sites(path: str | Path, schema: Mapping | None = None) -> SiteTable:
    """Read and validate a site table; row order follows the file."""
    schema = dict(schema) if schema is not None else default_schema()
    periods = tuple(schema["crashes"].keys())
    if tuple(schema["aadt"].keys()) != periods:
        raise DataError("schema aadt and crashes must cover the same periods")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in _required_columns(schema) if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        seen: dict[str, int] = {}
        for line, row in enumerate(reader, start=2):
            records.append(_parse_row(row, line, schema, periods))
            sid = records[-1].site_id
            if sid in seen:
                raise DataError(f"line {line}: duplicate site_id {sid!r} (first seen on line {seen[sid]})")
            seen[sid] = line
    return SiteTable(tuple(records), periods)


def _parse_row(row, line, schema, periods) -> SiteRecord:
    def num(col, lower=None, strict=False):
        raw = row[col]
        try:
            v = float(raw)
        except (TypeError, ValueError):
            raise DataError(f"line {line}, column {col}: non-numeric value {raw!r}") from None
        if not math.isfinite(v):
            raise DataError(f"line {line}, column {col}: non-finite value {raw!r}")
        if lower is not None and (v <= lower if strict else v < lower):
            op = ">" if strict else ">="
            raise DataError(f"line {line}, column {col}: value {raw!r} must be {op} {lower}")
        return v

    def count(col):
        v = num(col)
        if v < 0:
            raise DataError(f"line {line}, column {col}: negative crash count {row[col]!r}")
        if v != int(v):
            raise DataError(f"line {line}, column {col}: crash count {row[col]!r} is not an integer")
        return int(v)

    sid = (row[schema["site_id"]] or "").strip()
    if not sid:
        raise DataError(f"line {line}, column {schema['site_id']}: empty site_id")
    aadt = {}
    for p in periods:
        spec = schema["aadt"][p]
        cols = [spec] if isinstance(spec, str) else list(spec)
        aadt[p] = float(np.mean([num(c, 0, strict=True) for c in cols]))
    terrain_col = schema["terrain"]
    terrain = (row[terrain_col] or "").strip().lower()
    terrain = {"0": "level", "1": "rolling"}.get(terrain, terrain)
    if terrain not in TERRAIN_CODES:
        raise DataError(f"line {line}, column {terrain_col}: terrain {row[terrain_col]!r} is not level/rolling")
    return SiteRecord(
        site_id=sid,
        length_mi=num(schema["length_mi"], 0, strict=True),
        aadt=aadt,
        lsw1=num(schema["lsw1"], 0),
        lsw2=num(schema["lsw2"], 0),
        rsw1=num(schema["rsw1"], 0),
        rsw2=num(schema["rsw2"], 0),
        mw=num(schema["mw"], 0, strict=True),
        terrain=terrain,
        crashes={p: count(schema["crashes"][p]) for p in periods},
    )


def save_sites(table: SiteTable, path: str | Path) -> None:
    """Write ``table`` in the canonical column layout (floats round-trip exactly)."""
    header = ["site_id", "length_mi"] + [f"aadt_{p.lower()}" for p in table.period_ids]
    header += [*WIDTHS, "mw", "terrain"] + [f"crashes_{p.lower()}" for p in table.period_ids]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in table.records:
            w.writerow([r.site_id, repr(float(r.length_mi))]
                       + [repr(float(r.aadt[p])) for p in table.period_ids]
                       + [repr(float(getattr(r, k))) for k in (*WIDTHS, "mw")]
                       + [r.terrain] + [int(r.crashes[p]) for p in table.period_ids])


# -- normalisation -------------------------------------------------------------

@dataclass(frozen=True)
class FeatureScaler:
    """Min-max scaling of the 8-feature vector; terrain passes through as 0/1."""

    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    features: tuple[str, ...] = FEATURES
    aadt_mode: str = "period"

    def __post_init__(self):
        if len(self.features) != 8 or len(self.mins) != 8 or len(self.maxs) != 8:
            raise ValueError("scaler needs exactly 8 features")

    @property
    def _lo(self):
        return np.array(self.mins)

    @property
    def _span(self):
        span = np.array(self.maxs) - np.array(self.mins)
        return np.where(span > 0, span, 0.0)

    def transform(self, raw: np.ndarray, clip: bool = True) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        span = self._span
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (raw - self._lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0) if clip else out

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return self._lo + np.asarray(scaled, dtype=np.float64) * self._span

    def to_dict(self) -> dict:
        return {"features": list(self.features), "mins": list(self.mins),
                "maxs": list(self.maxs), "aadt_mode": self.aadt_mode}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureScaler:
        return cls(tuple(d["mins"]), tuple(d["maxs"]), tuple(d["features"]), d.get("aadt_mode", "period"))


def raw_features(table: SiteTable, period: str, aadt_mode: str = "period") -> np.ndarray:
    table.check_period(period)
    if not len(table):
        return np.zeros((0, len(FEATURES)))
    return np.column_stack([table.column(f, period, aadt_mode) for f in FEATURES])


def fit_scaler(table: SiteTable, period: str | None = None, aadt_mode: str = "period") -> FeatureScaler:
    if not len(table):
        raise DataError("cannot fit a scaler on an empty table")
    period = period or table.period_ids[0]
    x = raw_features(table, period, aadt_mode)
    lo, hi = x.min(axis=0), x.max(axis=0)
    t = FEATURES.index("terrain")
    lo[t], hi[t] = 0.0, 1.0
    return FeatureScaler(tuple(lo.tolist()), tuple(hi.tolist()), FEATURES, aadt_mode)


def normalize(scaler: FeatureScaler, record: SiteRecord, period: str) -> np.ndarray:
    raw = np.array([record.feature(f, period, scaler.aadt_mode) for f in scaler.features])
    return scaler.transform(raw)


def denormalize(scaler: FeatureScaler, vector: np.ndarray) -> np.ndarray:
    return scaler.inverse(vector)


def normalize_table(scaler: FeatureScaler, table: SiteTable, period: str) -> np.ndarray:
    return scaler.transform(raw_features(table, period, scaler.aadt_mode))


# -- correlation -----------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationMatrix:
    """Pearson correlations; ``nan`` marks pairs involving a zero-variance feature."""

    features: tuple[str, ...]
    values: np.ndarray

    def is_defined(self, a: str, b: str) -> bool:
        return bool(np.isfinite(self[a, b]))

    def __getitem__(self, key):
        a, b = key
        return float(self.values[self.features.index(a), self.features.index(b)])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", *self.features])
            for name, row in zip(self.features, self.values):
                w.writerow([name] + [repr(float(v)) if np.isfinite(v) else UNDEFINED for v in row])


def correlation_matrix(table: SiteTable, features: Sequence[str] | None = None,
                       period: str | None = None) -> CorrelationMatrix:
    """Pearson correlation matrix over ``features`` (may include ``crashes``).

    ``period=None`` uses the all-period mean AADT and total crashes.
    """
    features = tuple(features or (*FEATURES[:-1], "crashes"))
    if len(table) < 2:
        raise DataError("correlation needs at least 2 records")
    x = np.column_stack([table.column(f, period) for f in features])
    xc = x - x.mean(axis=0)
    sd = np.sqrt((xc ** 2).sum(axis=0))
    ok = sd > 0
    corr = np.full((len(features), len(features)), np.nan)
    if ok.any():
        z = xc[:, ok] / sd[ok]
        sub = np.clip(z.T @ z, -1.0, 1.0)
        np.fill_diagonal(sub, 1.0)
        corr[np.ix_(ok, ok)] = sub
    return CorrelationMatrix(features, corr)


# -- design matrices -------------------------------------------------------------

@dataclass(frozen=True)
class ModelForm:
    """Log-linear crash model: intercept, ln of exposure columns, raw others."""

    log_features: tuple[str, ...] = ("length_mi", "aadt")
    linear_features: tuple[str, ...] = ("rsw2", "mw")
    aadt_mode: str = "period"

    @property
    def columns(self) -> list[str]:
        return ["const"] + [f"ln_{f}" for f in self.log_features] + list(self.linear_features)

    def to_dict(self) -> dict:
        return {"log_features": list(self.log_features),
                "linear_features": list(self.linear_features), "aadt_mode": self.aadt_mode}

    @classmethod
    def from_dict(cls, d: dict) -> ModelForm:
        return cls(tuple(d["log_features"]), tuple(d["linear_features"]), d.get("aadt_mode", "period"))


def design_row(record: SiteRecord, period: str, form: ModelForm) -> np.ndarray:
    row = [1.0]
    for f in form.log_features:
        v = record.feature(f, period, form.aadt_mode)
        if not v > 0:
            raise DataError(f"site {record.site_id}: cannot take ln of {f}={v}")
        row.append(math.log(v))
    row.extend(record.feature(f, period, form.aadt_mode) for f in form.linear_features)
    return np.array(row)


def split_design(table: SiteTable, period: str, form: ModelForm | None = None):
    """Design matrix (one row per record, in table order) and crash counts."""
    form = form or ModelForm()
    table.check_period(period)
    if not len(table):
        return np.zeros((0, len(form.columns))), np.zeros(0)
    x = np.vstack([design_row(r, period, form) for r in table.records])
    return x, table.counts(period)
