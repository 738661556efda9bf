"""Negative-binomial (NB2) safety performance function.

The mean is log-linear in the design columns.  Coefficients are fitted by
IRLS for a fixed dispersion, and the dispersion is re-estimated from the
fitted means with the auxiliary no-constant OLS regression of Cameron and
Trivedi, alternating until both settle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln, xlogy

from .data import ModelForm, SiteRecord, design_row

MAX_ETA = 700.0


class FitError(RuntimeError):
    """Fit failed: rank deficiency or no convergence."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class FitStats:
    deviance: float
    pearson_chi2: float
    log_likelihood: float
    aic: float
    bic: float
    n: int
    k_params: int


@dataclass
class NbModel:
    beta: np.ndarray
    alpha: float
    se: np.ndarray
    p_values: np.ndarray
    fit: FitStats
    form: ModelForm | None = None
    alpha_se: float = float("nan")
    alpha_pinned: bool = False
    iterations: int = 0
    converged: bool = True
    dispersion: str = "ml"

    @property
    def columns(self) -> list[str]:
        if self.form is not None:
            return self.form.columns
        return ["const"] + [f"x{i}" for i in range(1, len(self.beta))]

    def to_dict(self) -> dict:
        return {
            "kind": "nb",
            "form": self.form.to_dict() if self.form else None,
            "columns": self.columns,
            "beta": self.beta.tolist(),
            "alpha": self.alpha,
            "alpha_se": None if math.isnan(self.alpha_se) else self.alpha_se,
            "se": self.se.tolist(),
            "p_values": self.p_values.tolist(),
            "fit": vars(self.fit).copy(),
            "meta": {"iterations": self.iterations, "converged": self.converged,
                     "alpha_pinned": self.alpha_pinned, "dispersion": self.dispersion},
        }

    @classmethod
    def from_dict(cls, d: dict) -> NbModel:
        if d.get("kind") != "nb":
            raise ValueError("not an NB model document")
        meta = d.get("meta", {})
        return cls(np.array(d["beta"], dtype=float), float(d["alpha"]),
                   np.array(d["se"], dtype=float), np.array(d["p_values"], dtype=float),
                   FitStats(**d["fit"]), ModelForm.from_dict(d["form"]) if d.get("form") else None,
                   float("nan") if d.get("alpha_se") is None else float(d["alpha_se"]), bool(meta.get("alpha_pinned", False)),
                   int(meta.get("iterations", 0)), bool(meta.get("converged", True)),
                   meta.get("dispersion", "ml"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> NbModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_design(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("design must be (n, p) and y (n,)")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("y must be nonnegative integers")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise FitError(f"design matrix is rank deficient (rank < {x.shape[1]})")
    return x, y


def _mean(x, beta):
    eta = x @ beta
    if np.any(eta > MAX_ETA):
        raise FitError("linear predictor overflow")
    return np.exp(eta)


def _irls(x, y, alpha, beta=None, tol=1e-8, max_iter=100):
    """Fisher scoring for the log-link NB2 (Poisson when alpha == 0)."""
    if beta is None:
        mu = (y + y.mean()) / 2.0 + 1e-3
        eta = np.log(mu)
    else:
        eta = x @ beta
        mu = np.exp(eta)
    trace = []
    for it in range(1, max_iter + 1):
        w = mu / (1.0 + alpha * mu)
        z = eta + (y - mu) / mu
        xw = x * w[:, None]
        new = np.linalg.solve(x.T @ xw, xw.T @ z)
        delta = np.inf if beta is None else float(np.max(np.abs(new - beta)))
        beta = new
        trace.append(delta)
        eta = x @ beta
        if np.any(eta > MAX_ETA) or not np.all(np.isfinite(eta)):
            raise FitError("IRLS diverged", trace)
        mu = np.exp(eta)
        if delta < tol:
            return beta, it
    raise FitError(f"IRLS did not converge in {max_iter} iterations", trace)


def fit_poisson(x, y, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Poisson maximum likelihood coefficients by IRLS."""
    x, y = _check_design(x, y)
    return _irls(x, y, 0.0, tol=tol, max_iter=max_iter)[0]


def estimate_dispersion(y, mu, with_se: bool = False):
    """Auxiliary OLS (no constant) of ((y - mu)^2 - y) / mu on mu.

    Negative estimates are clamped to 0.  With ``with_se`` also returns the
    OLS standard error of the slope.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != mu.shape:
        raise ValueError("y and mu differ in length")
    if np.any(mu <= 0):
        raise ValueError("mu must be strictly positive")
    z = ((y - mu) ** 2 - y) / mu
    ss = float(mu @ mu)
    alpha = float(z @ mu) / ss
    if not with_se:
        return max(alpha, 0.0)
    dof = max(len(y) - 1, 1)
    resid = z - alpha * mu
    se = math.sqrt(float(resid @ resid) / dof / ss)
    return max(alpha, 0.0), se


def _observed_information(x, y, mu, alpha):
    # -d2 logL / dbeta2 for the log-link NB2
    w = mu * (1.0 + alpha * y) / (1.0 + alpha * mu) ** 2
    return x.T @ (x * w[:, None])


def _profile_loglik(x, y, alpha, beta):
    beta, _ = _irls(x, y, alpha, beta=beta)
    return log_likelihood(y, _mean(x, beta), alpha), beta


def _refine_alpha(x, y, alpha0, beta0):
    """Maximise the profile log-likelihood over alpha, starting near ``alpha0``."""
    hi = max(5.0 * alpha0, 2.0)
    res = optimize.minimize_scalar(lambda a: -_profile_loglik(x, y, a, beta0)[0],
                                   bounds=(0.0, hi), method="bounded",
                                   options={"xatol": 1e-8})
    a = float(res.x)
    if a < 1e-6:
        a = 0.0
    # curvature of the profile likelihood gives the standard error
    h = 1e-3 * max(a, 1e-2)
    if a - h <= 0:
        return a, float("nan")
    lp = [_profile_loglik(x, y, a + d, beta0)[0] for d in (-h, 0.0, h)]
    curv = (lp[0] - 2.0 * lp[1] + lp[2]) / (h * h)
    se = math.sqrt(-1.0 / curv) if curv < 0 else float("nan")
    return a, se


def fit_nb(x, y, alpha: float | None = None, dispersion: str = "ml", tol: float = 1e-6,
           max_outer: int = 50, form: ModelForm | None = None) -> NbModel:
    """Fit the NB2 model by IRLS with an estimated (or fixed) dispersion.

    Starting from the Poisson fit, coefficient IRLS alternates with the
    auxiliary-OLS dispersion update until both settle.  With
    ``dispersion="ml"`` the dispersion is then refined by maximising the
    profile likelihood; ``dispersion="aux_ols"`` stops after the
    alternation.  Passing ``alpha`` fixes the dispersion (``alpha=0`` gives
    the Poisson fit).
    """
    if dispersion not in ("ml", "aux_ols"):
        raise ValueError(f"unknown dispersion method {dispersion!r}")
    x, y = _check_design(x, y)
    if form is not None and len(form.columns) != x.shape[1]:
        raise ValueError(f"form has {len(form.columns)} columns, design has {x.shape[1]}")
    beta, _ = _irls(x, y, 0.0)
    fixed = alpha is not None
    if fixed:
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        a = float(alpha)
    else:
        a = estimate_dispersion(y, _mean(x, beta))
    converged = fixed
    it = 0
    trace = []
    for it in range(1, max_outer + 1):
        new_beta, _ = _irls(x, y, a, beta=beta, tol=min(tol, 1e-8))
        d_beta = float(np.max(np.abs(new_beta - beta)))
        beta = new_beta
        if fixed:
            break
        new_a = estimate_dispersion(y, _mean(x, beta))
        d_a = abs(new_a - a)
        a = new_a
        trace.append((d_beta, d_a))
        if d_beta < tol and d_a < tol:
            converged = True
            break
    if not converged:
        raise FitError(f"NB fit did not converge in {max_outer} outer iterations", trace)

    a_se = float("nan")
    if not fixed:
        if dispersion == "ml":
            a, a_se = _refine_alpha(x, y, a, beta)
            beta, _ = _irls(x, y, a, beta=beta)
        else:
            a_se = estimate_dispersion(y, _mean(x, beta), with_se=True)[1]

    mu = _mean(x, beta)
    cov = np.linalg.inv(_observed_information(x, y, mu, a))
    se = np.sqrt(np.diag(cov))
    p_values = 2.0 * stats.norm.sf(np.abs(beta / se))
    model = NbModel(beta, a, se, p_values, None, form, a_se, alpha_pinned=(a == 0.0),
                    iterations=it, converged=converged, dispersion="fixed" if fixed else dispersion)
    model.fit = goodness_of_fit(model, x, y)
    return model


def nb_logpmf(y, mu, alpha):
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise ValueError("y must be nonnegative integers")
    if np.any(mu <= 0):
        raise ValueError("mu must be > 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return xlogy(y, mu) - mu - gammaln(y + 1.0)
    r = 1.0 / alpha
    am = alpha * mu
    return (gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
            + xlogy(y, am) - (y + r) * np.log1p(am))


def nb_pmf(y, mu, alpha):
    """NB2 probability of ``y`` crashes with mean ``mu`` and dispersion ``alpha``."""
    out = np.exp(nb_logpmf(y, mu, alpha))
    return float(out) if np.ndim(out) == 0 else out


def log_likelihood(y, mu, alpha) -> float:
    return float(np.sum(nb_logpmf(y, mu, alpha)))


def deviance(y, mu, alpha) -> float:
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if alpha == 0:
        d = xlogy(y, y / mu) - (y - mu)
    else:
        r = 1.0 / alpha
        d = xlogy(y, y / mu) - (y + r) * np.log((1.0 + alpha * y) / (1.0 + alpha * mu))
    return float(2.0 * np.sum(d))


def goodness_of_fit(model: NbModel, x, y) -> FitStats:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu = _mean(x, model.beta)
    a = model.alpha
    ll = log_likelihood(y, mu, a)
    k = len(model.beta) + (0 if model.alpha_pinned or a == 0 else 1)
    n = len(y)
    chi2 = float(np.sum((y - mu) ** 2 / (mu + a * mu ** 2)))
    return FitStats(deviance(y, mu, a), chi2, ll, -2.0 * ll + 2.0 * k, -2.0 * ll + k * math.log(n), n, k)


def predict_design(model: NbModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eta = x @ model.beta
    if np.any(eta > MAX_ETA):
        raise OverflowError("predicted crash frequency is not representable")
    return np.exp(eta)


def predict(model: NbModel, record: SiteRecord, periods=None) -> dict[str, float]:
    """Expected crashes per period for one site."""
    if model.form is None:
        raise ValueError("model has no feature form; use predict_design")
    periods = periods or list(record.crashes)
    return {p: float(predict_design(model, design_row(record, p, model.form))[0]) for p in periods}
