import math

import numpy as np
import pytest
from scipy import optimize, stats

from cganeb import data, nbglm, simgen
from cganeb.nbglm import FitError, NbModel


def newton_poisson(x, y):
    """Independent oracle: unconstrained minimisation of the Poisson NLL."""
    def nll(b):
        eta = x @ b
        return float(np.sum(np.exp(eta) - y * eta))

    def grad(b):
        return x.T @ (np.exp(x @ b) - y)

    def hess(b):
        return x.T @ (x * np.exp(x @ b)[:, None])

    res = optimize.minimize(nll, np.zeros(x.shape[1]), jac=grad, hess=hess, method="trust-exact",
                            options={"gtol": 1e-12})
    return res.x


def test_poisson_intercept_only():
    b = nbglm.fit_poisson(np.ones((4, 1)), [2, 2, 2, 2])
    assert b[0] == pytest.approx(math.log(2), abs=1e-10)


def test_poisson_two_group():
    x = np.column_stack([np.ones(4), [0, 0, 1, 1]])
    b = nbglm.fit_poisson(x, [1, 1, 3, 3])
    assert b == pytest.approx([0.0, math.log(3)], abs=1e-10)


def test_poisson_matches_newton_oracle():
    rng = np.random.default_rng(4)
    x = np.column_stack([np.ones(50), rng.normal(size=(50, 2)) * 0.5])
    y = rng.poisson(np.exp(x @ [0.3, 0.6, -0.4]))
    assert nbglm.fit_poisson(x, y) == pytest.approx(newton_poisson(x, y), abs=1e-6)


def test_rank_deficient_and_separation():
    x = np.column_stack([np.ones(6), np.arange(6), 2 * np.arange(6)])
    with pytest.raises(FitError):
        nbglm.fit_poisson(x, [0, 1, 2, 1, 3, 2])
    with pytest.raises(FitError):
        nbglm.fit_poisson(np.column_stack([np.ones(4), [0, 0, 1, 1]]), [0, 0, 2, 3])


def test_dispersion_two_point():
    assert nbglm.estimate_dispersion([3, 0], [1, 2]) == pytest.approx(1.0)


def test_dispersion_clamped():
    mu = np.array([1.0, 2.0, 5.0])
    assert nbglm.estimate_dispersion(mu, mu) == 0.0


def test_dispersion_synthetic():
    rng = np.random.default_rng(2)
    mu = rng.uniform(0.5, 20.0, 5000)
    y = simgen.draw_crashes(mu, 0.836, rng)
    assert nbglm.estimate_dispersion(y, mu) == pytest.approx(0.836, abs=0.1)


def test_nb_intercept_only_mean_matching():
    m = nbglm.fit_nb(np.ones((4, 1)), [0, 1, 2, 5])
    assert m.beta[0] == pytest.approx(math.log(2), abs=1e-8)
    for a in (0.3, 2.0):
        assert nbglm.fit_nb(np.ones((4, 1)), [0, 1, 2, 5], alpha=a).beta[0] == pytest.approx(math.log(2), abs=1e-8)


def test_alpha_zero_fit_equals_poisson():
    rng = np.random.default_rng(7)
    x = np.column_stack([np.ones(200), rng.normal(size=200)])
    y = rng.poisson(np.exp(0.5 + 0.3 * x[:, 1]))
    assert nbglm.fit_nb(x, y, alpha=0.0).beta == pytest.approx(nbglm.fit_poisson(x, y), abs=1e-6)


def test_recovers_zero_alpha():
    table, _ = simgen.generate_sites(simgen.SimConfig(n_sites=3085, alpha=0.0, seed=2))
    x, y = data.split_design(table, "P1")
    m = nbglm.fit_nb(x, y)
    assert m.alpha < 0.05
    assert np.all(np.abs(m.beta - simgen.DEFAULT_BETA) < 3 * m.se)


def test_aux_ols_mode_available(small_table):
    x, y = data.split_design(small_table, "P1")
    m = nbglm.fit_nb(x, y, dispersion="aux_ols")
    assert m.dispersion == "aux_ols" and m.alpha > 0


def test_predict_examples(record_factory):
    form = data.ModelForm()
    rec = record_factory(length=0.5, aadt=20000.0, rsw2=6.0, mw=30.0)
    zero = NbModel(np.zeros(5), 0.5, np.ones(5), np.ones(5), None, form)
    assert nbglm.predict(zero, rec) == {"P1": 1.0, "P2": 1.0}
    beta = np.array(simgen.DEFAULT_BETA)
    m = NbModel(beta, 0.836, np.ones(5), np.ones(5), None, form)
    doubled = record_factory(length=1.0, aadt=20000.0, rsw2=6.0, mw=30.0)
    assert nbglm.predict(m, doubled)["P1"] / nbglm.predict(m, rec)["P1"] == pytest.approx(2 ** 0.902)
    hand = math.exp(-11.8 + 0.902 * math.log(0.5) + 1.33 * math.log(20000) - 0.0627 * 6 + 0.002 * 30)
    assert nbglm.predict(m, rec)["P1"] == pytest.approx(hand, rel=1e-10)


def test_nb_pmf_examples():
    assert nbglm.nb_pmf(0, 1.0, 1.0) == pytest.approx(0.5)
    ys = np.arange(30)
    assert nbglm.nb_pmf(ys, 4.2, 1e-9) == pytest.approx(stats.poisson.pmf(ys, 4.2), abs=1e-6)
    assert nbglm.nb_pmf(ys, 4.2, 0.0) == pytest.approx(stats.poisson.pmf(ys, 4.2), abs=1e-12)
    assert abs(nbglm.nb_pmf(np.arange(501), 3.0, 0.8).sum() - 1.0) < 1e-9


def test_nb_pmf_matches_scipy_parametrisation():
    mu, a = 5.0, 0.7
    r = 1 / a
    ys = np.arange(60)
    assert nbglm.nb_pmf(ys, mu, a) == pytest.approx(stats.nbinom.pmf(ys, r, r / (r + mu)), rel=1e-10)


def test_nb_pmf_domain():
    with pytest.raises(ValueError):
        nbglm.nb_pmf(1.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        nbglm.nb_pmf(1, 0.0, 1.0)


def test_gof_perfect_fit():
    x = np.column_stack([np.ones(4), [0, 0, 1, 1]])
    m = nbglm.fit_nb(x, [2, 2, 6, 6], alpha=0.0)
    assert m.fit.deviance == pytest.approx(0.0, abs=1e-10)
    assert m.fit.pearson_chi2 == pytest.approx(0.0, abs=1e-10)


def test_gof_single_term():
    m = NbModel(np.array([0.0]), 0.5, np.ones(1), np.ones(1), None)
    stats_ = nbglm.goodness_of_fit(m, np.ones((1, 1)), [2])
    assert stats_.pearson_chi2 == pytest.approx(2 / 3, abs=1e-4)


def test_gof_matches_direct_summation(small_table):
    x, y = data.split_design(small_table, "P1")
    m = nbglm.fit_nb(x, y)
    mu = np.exp(x @ m.beta)
    r = 1 / m.alpha
    ll = float(np.sum(stats.nbinom.logpmf(y, r, r / (r + mu))))
    assert m.fit.log_likelihood == pytest.approx(ll, abs=1e-8)
    assert m.fit.aic == pytest.approx(-2 * ll + 2 * 6, abs=1e-8)
    assert m.fit.bic == pytest.approx(-2 * ll + 6 * math.log(len(y)), abs=1e-8)


def test_model_json_round_trip(tmp_path, small_table):
    x, y = data.split_design(small_table, "P1")
    m = nbglm.fit_nb(x, y, form=data.ModelForm())
    m.save(tmp_path / "m.json")
    back = NbModel.load(tmp_path / "m.json")
    assert np.array_equal(back.beta, m.beta) and back.alpha == m.alpha and back.form == m.form
    assert back.columns == data.ModelForm().columns


def test_form_mismatch_rejected(small_table):
    x, y = data.split_design(small_table, "P1")
    with pytest.raises(ValueError):
        nbglm.fit_nb(x[:, :3], y, form=data.ModelForm())


def test_predict_overflow():
    m = NbModel(np.array([800.0]), 0.5, np.ones(1), np.ones(1), None)
    with pytest.raises(OverflowError):
        nbglm.predict_design(m, np.ones((1, 1)))
