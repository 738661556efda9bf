"""Empirical-Bayes crash estimates for NB and CGAN predictions.

All quantities are totals over one study period: the prediction, its
variance and the observed count must refer to the same period length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cgan import CganModel, predict_table
from .data import SiteTable, split_design
from .nbglm import NbModel, predict_design

NB_EB = "NB_EB"
CGAN_EB = "CGAN_EB"


class DegenerateEstimateError(ValueError):
    """CGAN sample mean is not positive, so the credibility weight is undefined."""

    def __init__(self, message, site_id=None):
        super().__init__(message)
        self.site_id = site_id


@dataclass(frozen=True)
class EbEstimate:
    site_id: str
    prediction: float
    variance: float
    weight: float
    observed: float
    eb: float
    method: str
    flagged: bool = False


def _blend(w, pred, y):
    return float(w * pred + (1.0 - w) * y)


def eb_nb(mu: float, alpha: float, y: float, site_id: str = "") -> EbEstimate:
    """NB-EB: weight 1 / (1 + alpha * mu).

    The stored variance is that of the gamma-distributed true mean,
    ``alpha * mu**2``, so ``weight == prediction / (prediction + variance)``
    as for the CGAN estimate.
    """
    if not mu > 0 or alpha < 0 or y < 0:
        raise ValueError(f"site {site_id!r}: need mu > 0, alpha >= 0, y >= 0")
    mu, alpha, y = float(mu), float(alpha), float(y)
    w = 1.0 / (1.0 + alpha * mu)
    return EbEstimate(site_id, float(mu), float(alpha * mu * mu), w, float(y),
                      _blend(w, mu, y), NB_EB)


def eb_cgan(mean: float, var: float, y: float, site_id: str = "") -> EbEstimate:
    """CGAN-EB: weight E / (E + Var) from the generator's sample moments."""
    if var < 0 or y < 0:
        raise ValueError(f"site {site_id!r}: need var >= 0 and y >= 0")
    if not mean > 0:
        raise DegenerateEstimateError(
            f"site {site_id!r}: generator mean {mean} is not positive", site_id)
    mean, var, y = float(mean), float(var), float(y)
    w = mean / (mean + var)
    return EbEstimate(site_id, float(mean), float(var), w, float(y), _blend(w, mean, y), CGAN_EB)


def _fallback(site_id, mean, var, y):
    # zero-mean generator: no credible prior, keep the observed count
    return EbEstimate(site_id, float(mean), float(var), 0.0, float(y), float(y), CGAN_EB, True)


def eb_table(model, table: SiteTable, period: str, m: int = 500, seed: int = 0,
             on_degenerate: str = "raise") -> list[EbEstimate]:
    """One EB estimate per site for ``period``, NB or CGAN by model type.

    ``on_degenerate="flag"`` turns CGAN sites with a zero sample mean into
    flagged estimates that fall back on the observed count.
    """
    if on_degenerate not in ("raise", "flag"):
        raise ValueError(f"unknown on_degenerate policy {on_degenerate!r}")
    if not len(table):
        return []
    table.check_period(period)
    y = table.counts(period)
    ids = table.site_ids
    if isinstance(model, NbModel):
        x, _ = split_design(table, period, model.form)
        mu = predict_design(model, x)
        return [eb_nb(mu[i], model.alpha, y[i], ids[i]) for i in range(len(ids))]
    if isinstance(model, CganModel):
        if m < 2:
            raise ValueError("m must be >= 2")
        means, variances = predict_table(model, table, period, m, seed)
        out = []
        for i, sid in enumerate(ids):
            try:
                out.append(eb_cgan(means[i], variances[i], y[i], sid))
            except DegenerateEstimateError:
                if on_degenerate == "raise":
                    raise
                out.append(_fallback(sid, means[i], variances[i], y[i]))
        return out
    raise TypeError(f"unsupported model type {type(model).__name__}")


EB_COLUMNS = ["site_id", "method", "prediction", "variance", "weight", "observed", "eb", "flagged"]


def save_eb(estimates: list[EbEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EB_COLUMNS)
        for e in estimates:
            w.writerow([e.site_id, e.method, repr(e.prediction), repr(e.variance), repr(e.weight),
                        repr(e.observed), repr(e.eb), int(e.flagged)])


def load_eb(path: str | Path) -> list[EbEstimate]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in EB_COLUMNS[:-1] if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                out.append(EbEstimate(
                    row["site_id"], float(row["prediction"]), float(row["variance"]),
                    float(row["weight"]), float(row["observed"]), float(row["eb"]), row["method"],
                    bool(int(row.get("flagged") or 0))))
            except ValueError as exc:
                raise ValueError(f"{path}, line {line}: {exc}") from None
    return out


def eb_values(estimates: list[EbEstimate]) -> dict[str, float]:
    return {e.site_id: e.eb for e in estimates}


def as_arrays(estimates: list[EbEstimate]):
    """(prediction, variance, weight, observed, eb) arrays in list order."""
    return tuple(np.array([getattr(e, f) for e in estimates])
                 for f in ("prediction", "variance", "weight", "observed", "eb"))
