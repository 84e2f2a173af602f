import math

import mpmath as mp
import numpy as np
import pytest

from gttt.bounds import (
    BoundInputs,
    FiniteHypothesisClass,
    bound_report,
    constant_c,
    divergence_term,
    empirical_gap_term,
    empirical_hdh_distance,
    eps_for_bound,
    hoeffding_bound,
    lemma2_montecarlo,
    omega_grid,
    test_domain_bound as domain_bound,
    theorem1_bound,
    theorem2_check,
    weight_radical,
)
from gttt.errors import ValidationError


def inputs(**kw):
    base = dict(dhat=0.1, m=1000, d=3, delta=0.1, eps_joint=0.05, omega=(0.5, 0.5), lam=(0.5, 0.5), N=100)
    base.update(kw)
    return BoundInputs(**base)


def test_hdh_identical_samples_zero():
    hc = FiniteHypothesisClass(np.random.default_rng(0).integers(0, 2, (5, 10)))
    assert empirical_hdh_distance(hc, [1, 2, 3], [1, 2, 3]) == 0.0


def test_hdh_single_hypothesis_zero():
    hc = FiniteHypothesisClass(np.array([[0, 1, 1, 0]]))
    assert empirical_hdh_distance(hc, [0, 1], [2, 3]) == 0.0


def test_hdh_maximal():
    hc = FiniteHypothesisClass(np.array([[1, 1, 0, 0], [0, 0, 0, 0]]))
    assert empirical_hdh_distance(hc, [0, 1], [2, 3]) == 2.0


def test_hdh_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    hc = FiniteHypothesisClass(rng.integers(0, 2, (6, 20)))
    s1, s2 = rng.integers(0, 20, 8), rng.integers(0, 20, 11)
    d = empirical_hdh_distance(hc, s1, s2)
    assert d == empirical_hdh_distance(hc, s2, s1) and 0 <= d <= 2


def test_constant_c_independent_formula():
    b = inputs()
    # C = 2 sqrt( (sum w^2/l) (d ln(2N) - ln delta) / (2N) ) with sum = 0.25/0.5 * 2 = 1
    want = 2 * math.sqrt(1.0 * (3 * math.log(200) - math.log(0.1)) / 200)
    assert abs(constant_c(b) - want) < 1e-12
    # second, higher-precision evaluation
    mp.mp.dps = 40
    hp = 2 * mp.sqrt((3 * mp.log(200) - mp.log(mp.mpf("0.1"))) / 200)
    assert abs(constant_c(b) - float(hp)) < 1e-14


def test_theorem_bound_source_weights_only():
    b = inputs(omega=(1.0, 0.0), lam=(0.5, 0.5))
    assert theorem1_bound(b, j=0) == constant_c(b)


def test_theorem_bound_monotone():
    lo, hi = theorem1_bound(inputs(dhat=0.1)), theorem1_bound(inputs(dhat=0.3))
    assert abs((hi - lo) - 0.5 * 0.2) < 1e-12
    assert theorem1_bound(inputs(eps_joint=0.2)) > theorem1_bound(inputs(eps_joint=0.1))


def test_domain_bound_values():
    assert abs(domain_bound(1.0, 1.0, 0.5, 0.5) - 1.5) < 1e-15
    assert abs(domain_bound(2.0, 3.0, 0.0, 0.25) - 3.0 * math.sqrt(1 / 0.75)) < 1e-14
    with pytest.raises(ValidationError):
        domain_bound(1.0, 1.0, 0.5, 1.0)


def test_radical_minimum_at_lambda():
    for lam in (0.1, 0.37, 0.5, 0.9):
        grid = omega_grid(lam, 201)
        vals = [weight_radical(w, lam) for w in grid]
        assert grid[int(np.argmin(vals))] == lam
        assert min(vals) == pytest.approx(1.0, abs=1e-15)
        assert all(v >= 1.0 - 1e-15 for v in vals)


def test_weighted_check_example():
    best, ftt, holds = theorem2_check(1.0, 1.0, 0.5)
    assert best <= 1.5 < 2.0 == ftt and holds


def test_witness_row_bounds_grid_min():
    A, M, lam = 0.7, 0.4, 0.3
    best, _, _ = theorem2_check(A, M, lam, grid=11)
    assert best <= lam * A + M + 1e-15


def test_report_shape():
    r = bound_report(inputs(omega=(0.3, 0.7), lam=(0.9, 0.1)), grid=51)
    assert set(r) == {"inputs", "theorem1", "A", "M", "test_domain_curve", "theorem2"}
    assert len(r["test_domain_curve"]) == 51
    assert r["theorem2"]["holds"] is True
    assert r["A"] == divergence_term(inputs()) and r["M"] == empirical_gap_term(inputs())


def test_input_validation():
    with pytest.raises(ValidationError):
        inputs(omega=(0.6, 0.6)).validate()
    with pytest.raises(ValidationError):
        inputs(delta=1.0).validate()
    with pytest.raises(ValidationError):
        bound_report(inputs(lam=(1.0, 0.0), omega=(1.0, 0.0)))


def test_hoeffding_inverse():
    e = eps_for_bound((0.5, 0.5), (0.5, 0.5), 200, 0.05)
    assert abs(hoeffding_bound((0.5, 0.5), (0.5, 0.5), 200, e) - 0.05) < 1e-12


def test_montecarlo_large_eps_never_violates():
    assert lemma2_montecarlo((0.5, 0.5), (0.5, 0.5), 200, 1.0, 2000, 0) == 0.0


def test_montecarlo_within_bound():
    e = eps_for_bound((0.5, 0.5), (0.5, 0.5), 200, 0.05)
    rate = lemma2_montecarlo((0.5, 0.5), (0.5, 0.5), 200, e, 10000, 1)
    assert rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 10000)


def test_montecarlo_more_samples_concentrate():
    e = 0.05
    r1 = lemma2_montecarlo((0.5, 0.5), (0.5, 0.5), 200, e, 10000, 2)
    r2 = lemma2_montecarlo((0.5, 0.5), (0.5, 0.5), 400, e, 10000, 2)
    assert r2 <= r1
