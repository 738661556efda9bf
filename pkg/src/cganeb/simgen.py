"""Synthetic road-segment tables with known NB ground truth.

Site features are drawn to sit inside the envelope of the Washington urban
freeway summary statistics (ranges, means, SDs), crash counts are drawn as
a gamma-Poisson mixture around a known log-linear mean.  Both periods share
the same true mean, so the tables are stationary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .data import PERIODS, ModelForm, SiteRecord, SiteTable, design_row

DEFAULT_BETA = (-11.8, 0.902, 1.33, -0.0627, 0.00200)
DEFAULT_ALPHA = 0.836
MAX_MU = 1e9


@dataclass(frozen=True)
class FeatureDist:
    """A bounded marginal: ``lognormal`` or ``truncnormal`` with target mean/sd."""

    kind: str
    mean: float
    sd: float
    lo: float
    hi: float

    def _base(self):
        if self.kind == "lognormal":
            s2 = math.log1p((self.sd / self.mean) ** 2)
            return stats.lognorm(s=math.sqrt(s2), scale=self.mean * math.exp(-s2 / 2))
        if self.kind == "truncnormal":
            a, b = (self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd
            return stats.truncnorm(a, b, loc=self.mean, scale=self.sd)
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    def ppf(self, u):
        """Quantile function restricted to ``[lo, hi]``."""
        base = self._base()
        if self.kind == "lognormal":
            lo, hi = base.cdf(self.lo), base.cdf(self.hi)
            u = lo + np.asarray(u) * (hi - lo)
        return np.clip(base.ppf(u), self.lo, self.hi)


DEFAULT_FEATURES = {
    "length_mi": FeatureDist("lognormal", 0.1, 0.1, 0.01, 2.02),
    "aadt": FeatureDist("lognormal", 46618.0, 27725.0, 4328.0, 178149.0),
    "lsw1": FeatureDist("truncnormal", 2.1, 2.5, 0.0, 22.0),
    "lsw2": FeatureDist("truncnormal", 2.2, 2.6, 0.0, 20.0),
    "rsw1": FeatureDist("truncnormal", 8.6, 3.6, 0.0, 24.0),
    "rsw2": FeatureDist("truncnormal", 8.5, 3.5, 0.0, 22.0),
    "mw": FeatureDist("lognormal", 40.1, 41.6, 2.0, 750.0),
}


@dataclass(frozen=True)
class SimConfig:
    n_sites: int = 3085
    beta: tuple[float, ...] = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    form: ModelForm = field(default_factory=ModelForm)
    features: dict = field(default_factory=lambda: dict(DEFAULT_FEATURES))
    p_rolling: float = 2047 / 3085
    # Pearson correlation within the left pair and within the right pair of shoulders.
    shoulder_corr: float | None = 0.8
    # exp(linear predictor) is the expected count for one period of this many years.
    period_years: float = 3.0
    # multiplier from exp(linear predictor) to expected crashes per period
    period_scale: float = 1.0
    period_ids: tuple[str, ...] = PERIODS
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.n_sites < 0:
            raise ValueError("n_sites must be >= 0")
        if len(self.beta) != len(self.form.columns):
            raise ValueError("beta length does not match the model form")

    def with_seed(self, seed: int) -> SimConfig:
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Truth:
    site_ids: tuple[str, ...]
    mu: dict  # period -> array of expected crashes per period

    def save(self, path: str | Path) -> None:
        periods = list(self.mu)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site_id"] + [f"mu_true_{p.lower()}" for p in periods])
            for i, sid in enumerate(self.site_ids):
                w.writerow([sid] + [repr(float(self.mu[p][i])) for p in periods])

    @classmethod
    def load(cls, path: str | Path) -> Truth:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        periods = [h[len("mu_true_"):].upper() for h in header[1:]]
        mu = {p: np.array([float(r[j + 1]) for r in body]) for j, p in enumerate(periods)}
        return cls(tuple(r[0] for r in body), mu)


def draw_crashes(mu, alpha: float, rng=None, size=None):
    """NB2 counts via the gamma-Poisson mixture (Poisson when ``alpha == 0``)."""
    rng = np.random.default_rng(rng)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu <= 0):
        raise ValueError("mu must be > 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    shape = size if size is not None else mu.shape
    if alpha == 0:
        out = rng.poisson(np.broadcast_to(mu, shape))
    else:
        lam = rng.gamma(1.0 / alpha, np.broadcast_to(alpha * mu, shape))
        out = rng.poisson(lam)
    return int(out) if np.ndim(out) == 0 else out


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _copula_corr(rho: float, d1: FeatureDist, d2: FeatureDist) -> float:
    # Pearson correlation of (d1.ppf(Phi(Z1)), d2.ppf(Phi(Z2))) with corr(Z1, Z2) = rho
    a = _GH_NODES[:, None]
    b = _GH_NODES[None, :]
    z2 = rho * a + math.sqrt(1.0 - rho * rho) * b
    g1 = d1.ppf(stats.norm.cdf(a)) * np.ones_like(z2)
    g2 = d2.ppf(stats.norm.cdf(z2))
    w = _GH_WEIGHTS[:, None] * _GH_WEIGHTS[None, :]
    m1, m2 = (w * g1).sum(), (w * g2).sum()
    cov = (w * (g1 - m1) * (g2 - m2)).sum()
    return cov / math.sqrt((w * (g1 - m1) ** 2).sum() * (w * (g2 - m2) ** 2).sum())


@lru_cache(maxsize=64)
def latent_correlation(target: float, d1: FeatureDist, d2: FeatureDist) -> float:
    """Gaussian-copula correlation that yields Pearson ``target`` between the marginals."""
    if target == 0:
        return 0.0
    lo, hi = -0.999, 0.999
    f = lambda r: _copula_corr(r, d1, d2) - target  # noqa: E731
    if f(lo) > 0 or f(hi) < 0:
        raise ValueError(f"correlation {target} is not attainable for these marginals")
    return optimize.brentq(f, lo, hi, xtol=1e-10)


def _sample_features(config: SimConfig, rng: np.random.Generator) -> dict:
    n = config.n_sites
    feats = config.features
    z = rng.standard_normal((n, 7))
    names = ("length_mi", "aadt", "lsw1", "lsw2", "rsw1", "rsw2", "mw")
    zs = dict(zip(names, z.T))
    if config.shoulder_corr:
        for a, b in (("lsw1", "lsw2"), ("rsw1", "rsw2")):
            r = latent_correlation(config.shoulder_corr, feats[a], feats[b])
            zs[b] = r * zs[a] + math.sqrt(1.0 - r * r) * zs[b]
    out = {k: feats[k].ppf(stats.norm.cdf(zs[k])) for k in names}
    out["terrain"] = np.where(rng.uniform(size=n) < config.p_rolling, "rolling", "level")
    return out


def generate_sites(config: SimConfig = SimConfig()) -> tuple[SiteTable, Truth]:
    """Draw a site table and the per-site true means used to draw its counts."""
    seeds = np.random.SeedSequence(config.seed).spawn(1 + len(config.period_ids))
    n = config.n_sites
    feats = _sample_features(config, np.random.default_rng(seeds[0]))
    ids = tuple(f"S{i:05d}" for i in range(n))
    beta = np.asarray(config.beta, dtype=np.float64)

    protos = []
    for i in range(n):
        protos.append(SiteRecord(
            site_id=ids[i], length_mi=float(feats["length_mi"][i]),
            aadt={p: float(feats["aadt"][i]) for p in config.period_ids},
            lsw1=float(feats["lsw1"][i]), lsw2=float(feats["lsw2"][i]),
            rsw1=float(feats["rsw1"][i]), rsw2=float(feats["rsw2"][i]),
            mw=float(feats["mw"][i]), terrain=str(feats["terrain"][i]),
            crashes={p: 0 for p in config.period_ids}))

    mu = {}
    counts = {}
    for p, ss in zip(config.period_ids, seeds[1:]):
        if n:
            x = np.vstack([design_row(r, p, config.form) for r in protos])
            m = config.period_scale * np.exp(x @ beta)
        else:
            m = np.zeros(0)
        if not np.all(np.isfinite(m)) or np.any(m > MAX_MU):
            raise ValueError("true crash means overflow; check beta and feature ranges")
        mu[p] = m
        counts[p] = draw_crashes(m, config.alpha, np.random.default_rng(ss)) if n else np.zeros(0, int)

    records = tuple(replace(r, crashes={p: int(counts[p][i]) for p in config.period_ids})
                    for i, r in enumerate(protos))
    return SiteTable(records, config.period_ids), Truth(ids, mu)
