import numpy as np
import pytest

from cganeb import nbglm, simgen
from cganeb.simgen import SimConfig


def test_empty_config():
    table, truth = simgen.generate_sites(SimConfig(n_sites=0))
    assert len(table) == 0 and truth.site_ids == ()


def test_same_seed_same_table():
    a = simgen.generate_sites(SimConfig(n_sites=200, seed=5))
    b = simgen.generate_sites(SimConfig(n_sites=200, seed=5))
    assert a[0] == b[0]
    assert np.array_equal(a[1].mu["P1"], b[1].mu["P1"])
    assert simgen.generate_sites(SimConfig(n_sites=200, seed=6))[0] != a[0]


def test_features_within_envelope(small_table):
    for name, dist in simgen.DEFAULT_FEATURES.items():
        col = small_table.column(name, "P1")
        assert col.min() >= dist.lo and col.max() <= dist.hi, name
    assert set(r.terrain for r in small_table) == {"level", "rolling"}


def test_stationary_truth(small_sim):
    table, truth = small_sim
    assert np.array_equal(truth.mu["P1"], truth.mu["P2"])
    assert not np.array_equal(table.counts("P1"), table.counts("P2"))


def test_truth_round_trip(tmp_path, small_sim):
    _, truth = small_sim
    truth.save(tmp_path / "t.csv")
    back = simgen.Truth.load(tmp_path / "t.csv")
    assert back.site_ids == truth.site_ids
    assert np.array_equal(back.mu["P2"], truth.mu["P2"])


PER_YEAR_REASON = ("exp(linear predictor) with the default coefficients is a per-period total; "
                   "over the default feature envelope it averages ~0.98 per 3-year period, "
                   "i.e. ~0.33 crashes/year, below the 0.6-1.2 band")


@pytest.mark.xfail(strict=True, reason=PER_YEAR_REASON)
def test_default_mean_per_year_near_reference():
    table, _ = simgen.generate_sites(SimConfig(seed=1))
    per_year = table.counts("P1") / 3.0
    assert per_year.mean() == pytest.approx(0.9, abs=0.3)


def test_period_scale_reaches_reference_mean():
    table, _ = simgen.generate_sites(SimConfig(seed=1, period_scale=3.0))
    assert (table.counts("P1") / 3.0).mean() == pytest.approx(0.9, abs=0.3)


def test_poisson_moments():
    y = simgen.draw_crashes(4.0, 0.0, np.random.default_rng(0), size=100_000)
    assert y.mean() == pytest.approx(4.0, abs=0.06)
    assert y.var() == pytest.approx(4.0, abs=0.2)


def test_nb_variance_identity():
    y = simgen.draw_crashes(5.0, 0.836, np.random.default_rng(1), size=100_000)
    assert y.mean() == pytest.approx(5.0, rel=0.05)
    assert y.var() == pytest.approx(5 + 0.836 * 25, rel=0.05)


def test_draw_domain():
    with pytest.raises(ValueError):
        simgen.draw_crashes(0.0, 0.5)
    with pytest.raises(ValueError):
        simgen.draw_crashes(1.0, -0.1)
    assert isinstance(simgen.draw_crashes(2.0, 0.5, 3), int)


def test_pmf_total_variation_small():
    y = simgen.draw_crashes(3.0, 0.8, np.random.default_rng(2), size=200_000)
    k = np.arange(y.max() + 1)
    emp = np.bincount(y) / y.size
    tv = 0.5 * (np.abs(emp - nbglm.nb_pmf(k, 3.0, 0.8)).sum() + (1 - nbglm.nb_pmf(k, 3.0, 0.8).sum()))
    assert tv < 0.01


def test_latent_correlation_hits_target():
    d = simgen.DEFAULT_FEATURES
    rho = simgen.latent_correlation(0.8, d["lsw1"], d["lsw2"])
    assert 0.8 < rho < 1.0
    assert simgen._copula_corr(rho, d["lsw1"], d["lsw2"]) == pytest.approx(0.8, abs=1e-8)


def test_mu_overflow_rejected():
    with pytest.raises(ValueError, match="overflow"):
        simgen.generate_sites(SimConfig(n_sites=10, beta=(30.0, 0.9, 1.33, 0.0, 0.0)))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(alpha=-1)
    with pytest.raises(ValueError):
        SimConfig(beta=(1.0, 2.0))
