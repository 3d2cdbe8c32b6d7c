import math

import numpy as np
import pytest

import oracles
from conftest import random_sample
from npthresh.errors import DomainError, EstimationError
from npthresh.estimators import (RegimeInterval, RegimePartition, Sample, Smoother, cond_var_hat,
                                 density_hat, nw_hat, regime_indicator, ssr)
from npthresh.kernels import KernelConfig

FLOOR = 1e-10


def test_sample_validation():
    with pytest.raises(DomainError):
        Sample(y=[1.0, 2.0], x=[1.0], q=[0.0, 1.0])
    with pytest.raises(DomainError):
        Sample(y=[1.0, np.nan], x=[1.0, 2.0], q=[0.0, 1.0])
    s = Sample(y=[1.0, 2.0], x=[1.0, 2.0], q=[0.0, 1.0])
    assert (s.n, s.p) == (2, 1)
    with pytest.raises(ValueError):
        s.y[0] = 5.0


def test_interval_and_partition():
    iv = RegimeInterval(0.0, 1.0)
    assert iv.contains([0.0, 0.5, 1.0]).tolist() == [True, True, False]
    assert regime_indicator(0.0, iv) == 1 and regime_indicator(1.0, iv) == 0
    with pytest.raises(DomainError):
        RegimeInterval(1.0, 1.0)
    with pytest.raises(DomainError):
        regime_indicator(float("inf"), iv)


def test_partition_requires_increasing():
    with pytest.raises(DomainError):
        RegimePartition((0.5, -0.2))
    p = RegimePartition((-0.2,)).insert(0.5).insert(-1.0)
    assert p.thresholds == (-1.0, -0.2, 0.5)
    assert [str(r) for r in p.regimes()][0] == "[-inf, -1)"
    assert p.s == 3 and len(p.regimes()) == 4


def test_pointwise_estimators_match_oracle():
    s = random_sample(11, 120)
    cfg = KernelConfig(h=0.4)
    y, x, q = s.y.tolist(), s.x[:, 0].tolist(), s.q.tolist()
    for lo, hi in [(-math.inf, math.inf), (-0.5, 0.7), (0.2, math.inf)]:
        iv = RegimeInterval(lo, hi)
        for x0 in (-1.0, 0.0, 0.8):
            assert density_hat(s, iv, x0, cfg) == pytest.approx(
                oracles.density(y, x, q, lo, hi, x0, 0.4), abs=1e-12)
            assert nw_hat(s, iv, x0, cfg) == pytest.approx(
                oracles.nw(y, x, q, lo, hi, x0, 0.4, FLOOR), abs=1e-12)
            assert cond_var_hat(s, iv, x0, cfg) == pytest.approx(
                oracles.cond_var(y, x, q, lo, hi, x0, 0.4, FLOOR), abs=1e-12)


def test_vector_evaluation_returns_array(small_sample):
    cfg = KernelConfig(h=0.5)
    out = density_hat(small_sample, RegimeInterval(), np.array([[0.0], [1.0]]), cfg)
    assert out.shape == (2,)


def test_empty_regime_raises(small_sample):
    cfg = KernelConfig(h=0.5)
    with pytest.raises(EstimationError):
        nw_hat(small_sample, RegimeInterval(50.0, 60.0), 0.0, cfg)
    assert density_hat(small_sample, RegimeInterval(50.0, 60.0), 0.0, cfg) == 0.0


def test_constant_y_gives_zero_variance(small_sample):
    s = Sample(y=np.full(small_sample.n, 3.0), x=small_sample.x, q=small_sample.q)
    cfg = KernelConfig(h=0.5)
    assert nw_hat(s, RegimeInterval(), 0.3, cfg) == pytest.approx(3.0, abs=1e-14)
    assert cond_var_hat(s, RegimeInterval(), 0.3, cfg) == pytest.approx(0.0, abs=1e-12)


def test_smoother_interval_stats_match_pointwise(small_sample):
    cfg = KernelConfig(h=0.45)
    sm = Smoother(small_sample, cfg)
    ivs = [RegimeInterval(), RegimeInterval(-0.3, 0.4), RegimeInterval(0.4, math.inf)]
    f, m, v = sm.interval_stats(ivs)
    for j, iv in enumerate(ivs):
        np.testing.assert_allclose(f[:, j], density_hat(small_sample, iv, sm.x, cfg), atol=1e-13)
        np.testing.assert_allclose(m[:, j], nw_hat(small_sample, iv, sm.x, cfg), atol=1e-12)
        np.testing.assert_allclose(v[:, j], cond_var_hat(small_sample, iv, sm.x, cfg), atol=1e-12)


def test_chunked_path_matches_cached(monkeypatch, small_sample):
    import npthresh.estimators as est
    cfg = KernelConfig(h=0.45)
    cached = Smoother(small_sample, cfg)
    monkeypatch.setattr(est, "KERNEL_CACHE_MAX_N", 10)
    monkeypatch.setattr(est, "_ROW_CHUNK", 17)
    chunked = Smoother(small_sample, cfg)
    assert chunked._kernel is None
    ivs = [RegimeInterval(), RegimeInterval(-0.3, 0.4)]
    for a, b in zip(cached.interval_stats(ivs), chunked.interval_stats(ivs)):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
    part = RegimePartition((0.1,))
    assert chunked.ssr(part) == pytest.approx(cached.ssr(part), rel=1e-13)


def test_ssr_matches_oracle():
    s = random_sample(5, 90)
    cfg = KernelConfig(h=0.5, min_regime_obs=5)
    for th in [(), (0.3,), (-0.5, 0.4)]:
        got = ssr(s, RegimePartition(th), cfg)
        want = oracles.ssr(s.y.tolist(), s.x[:, 0].tolist(), s.q.tolist(), 0.5, FLOOR, th)
        assert got == pytest.approx(want, rel=1e-12)


def test_ssr_rejects_under_populated_regime(small_sample):
    cfg = KernelConfig(h=0.5, min_regime_obs=10)
    top = float(np.sort(small_sample.q)[-3])
    with pytest.raises(EstimationError):
        ssr(small_sample, RegimePartition((top,)), cfg)


def test_dimension_mismatch(small_sample):
    with pytest.raises(DomainError):
        Smoother(small_sample, KernelConfig(h=0.5, dim_p=2))
