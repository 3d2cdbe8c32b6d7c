import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import random_sample
from npthresh.estimators import RegimeInterval, RegimePartition, Sample, density_hat, regime_indicator
from npthresh.inference import critical_value, gamma_tilde, matrix_inv_sqrt, p_value, regime_test
from npthresh.kernels import KernelConfig, WeightBox, resolve_bandwidth

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
SLOW = settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])
BOX = WeightBox((-1.5,), (1.5,))

finite = st.floats(-5, 5, allow_nan=False)
cut_lists = st.lists(st.floats(-3, 3, allow_nan=False), min_size=0, max_size=5, unique=True)


@FAST
@given(cuts=cut_lists, q=finite)
def test_indicators_partition_unity(cuts, q):
    regimes = RegimePartition(tuple(sorted(cuts))).regimes()
    assert sum(regime_indicator(q, r) for r in regimes) == 1


@SLOW
@given(seed=st.integers(0, 10_000), cuts=cut_lists, x0=st.floats(-2, 2))
def test_density_is_additive_over_regimes(seed, cuts, x0):
    s = random_sample(seed, 80)
    cfg = KernelConfig(h=0.5)
    whole = density_hat(s, RegimeInterval(), x0, cfg)
    parts = sum(density_hat(s, r, x0, cfg) for r in RegimePartition(tuple(sorted(cuts))).regimes())
    assert parts == pytest.approx(whole, abs=1e-12)


@SLOW
@given(seed=st.integers(0, 10_000), tau=st.floats(-0.5, 0.5))
def test_gamma_tilde_nonnegative_and_zero_for_constant(seed, tau):
    s = random_sample(seed, 100)
    cfg = KernelConfig(h=0.5, min_regime_obs=5)
    assert gamma_tilde(s, RegimeInterval(), tau, cfg, BOX) >= 0.0
    flat = Sample(np.full(s.n, 2.0), s.x, s.q)
    assert gamma_tilde(flat, RegimeInterval(), tau, cfg, BOX) == pytest.approx(0.0, abs=1e-20)


@SLOW
@given(seed=st.integers(0, 10_000), m=st.integers(2, 6))
def test_sigma_symmetric_and_positive_after_floor(seed, m):
    s = random_sample(seed, 120)
    cfg = KernelConfig(h=0.5, min_regime_obs=5)
    res = regime_test(s, RegimeInterval(), m, cfg, BOX)
    sig = res.sigma_matrix
    np.testing.assert_allclose(sig, sig.T, atol=1e-14)
    r = matrix_inv_sqrt(sig)
    assert np.all(np.linalg.eigvalsh(r) > 0)


@FAST
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_inverse_square_root_reconstructs(seed, k):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(k, k))
    m = a @ a.T + 0.2 * np.eye(k)
    r = matrix_inv_sqrt(m)
    np.testing.assert_allclose(r @ m @ r, np.eye(k), atol=1e-8)


@FAST
@given(k=st.integers(1, 20), alpha=st.floats(1e-4, 0.5))
def test_p_value_inverts_critical_value(k, alpha):
    assert p_value(critical_value(k, alpha), k) == pytest.approx(alpha, abs=1e-9)


@FAST
@given(k=st.integers(1, 10), a1=st.floats(0.001, 0.5), a2=st.floats(0.001, 0.5))
def test_critical_value_monotone_in_alpha(k, a1, a2):
    if a1 < a2:
        assert critical_value(k, a1) >= critical_value(k, a2)


@FAST
@given(n=st.integers(10, 10**6), c=st.floats(0.1, 5), delta=st.floats(2.1, 10))
def test_bandwidth_shrinks_with_n(n, c, delta):
    h1 = resolve_bandwidth(c, 1.0, n, delta)
    h2 = resolve_bandwidth(c, 1.0, n + 1, delta)
    assert 0 < h2 < h1
    assert h1 == pytest.approx(c * n ** (-1 / delta), rel=1e-12)


@FAST
@given(lo=finite, width=st.floats(0.01, 5), q=finite)
def test_interval_is_half_open(lo, width, q):
    iv = RegimeInterval(lo, lo + width)
    assert regime_indicator(q, iv) == int(lo <= q < lo + width)
