import numpy as np
import pytest

from riesz_she import (Lattice, RieszSpec, build_embedding, cell_self_energy,
                       covariance_diagnostic, riesz_kernel_eval, sample_slice)
from riesz_she.noise import EmbeddingError
from riesz_she.streams import stream_for


def test_spec_rejects_bad_beta():
    with pytest.raises(ValueError):
        RieszSpec(d=1, beta=1.0)
    with pytest.raises(ValueError):
        RieszSpec(d=1, beta=1.5)
    with pytest.raises(ValueError):
        RieszSpec(d=3, beta=2.0)
    with pytest.raises(ValueError):
        RieszSpec(d=2, beta=0.0)
    RieszSpec(d=3, beta=1.9)  # < min(d,2) is fine


def test_kernel_eval_examples():
    assert riesz_kernel_eval([1.0], RieszSpec(1, 0.5)) == pytest.approx(1.0)
    assert riesz_kernel_eval([2.0], RieszSpec(1, 0.5)) == pytest.approx(
        2 ** -0.5, abs=1e-12)
    assert riesz_kernel_eval([3.0, 4.0], RieszSpec(2, 1.0)) == pytest.approx(0.2)


def test_kernel_eval_singular_point():
    with pytest.raises(ValueError, match="cell_self_energy"):
        riesz_kernel_eval([0.0, 0.0], RieszSpec(2, 1.0))


def test_cell_self_energy_closed_form():
    spec = RieszSpec(1, 0.5)
    assert cell_self_energy(1.0, spec) == pytest.approx(2 / 0.75, rel=1e-12)
    # h^{-beta} scaling
    assert cell_self_energy(0.25, spec) == pytest.approx(
        (2 / 0.75) * 0.25 ** -0.5, rel=1e-12)


def test_cell_self_energy_d2_frozen_oracle():
    # 2.97321: deterministic polar quadrature of the unit-square pair
    # integral int (1-|d1|)(1-|d2|)/|d|; MC here must agree within 3 se.
    val, se = cell_self_energy(1.0, RieszSpec(2, 1.0), return_stderr=True)
    assert se > 0
    assert abs(val - 2.97321) < 3 * se + 1e-4


def test_cell_self_energy_bad_h():
    with pytest.raises(ValueError):
        cell_self_energy(0.0, RieszSpec(1, 0.5))


def test_embedding_row_d1_n4():
    lat = Lattice(d=1, n=4, L=2.0)  # h = 1
    spec = RieszSpec(1, 0.5)
    cov = build_embedding(lat, spec)
    expect = [2 / 0.75, 1.0, 2 ** -0.5, 1.0]
    assert np.allclose(cov.row, expect, rtol=1e-12)


def test_embedding_eigen_symmetry_and_trace():
    lat = Lattice(d=1, n=64, L=8.0)
    spec = RieszSpec(1, 0.5)
    cov = build_embedding(lat, spec)
    lam = cov.eigenvalues
    # symmetric under frequency negation
    assert np.allclose(lam, lam[(-np.arange(64)) % 64], atol=1e-10)
    # trace identity
    assert lam.sum() / 64 == pytest.approx(cov.row[0], rel=1e-10)
    assert 0.0 <= cov.clamped_mass < 0.01


def test_embedding_clamp_budget_error_path():
    lat = Lattice(d=1, n=64, L=8.0)
    with pytest.raises(EmbeddingError, match="refine lattice"):
        build_embedding(lat, RieszSpec(1, 0.5), clamp_budget=0.0)


def test_embedding_dimension_mismatch():
    with pytest.raises(ValueError):
        build_embedding(Lattice(d=2, n=16, L=2.0), RieszSpec(1, 0.5))


@pytest.fixture(scope="module")
def slices_1d():
    # d=1 reference-style config at h = 0.25
    lat = Lattice(d=1, n=64, L=8.0)
    spec = RieszSpec(1, 0.5)
    cov = build_embedding(lat, spec)
    dt = 0.01
    slices = [sample_slice(cov, dt, stream_for(11, i, 0)) for i in range(10_000)]
    return lat, spec, cov, dt, slices


def test_slice_mean_and_variance(slices_1d):
    lat, spec, cov, dt, slices = slices_1d
    vals = np.stack([s.values for s in slices])
    cell = vals[:, 17]
    target_var = dt * cell_self_energy(lat.h, spec)  # 0.0533...
    assert target_var == pytest.approx(0.05333, rel=1e-3)
    se = cell.std(ddof=1) / np.sqrt(len(cell))
    assert abs(cell.mean()) < 4 * se
    assert abs(cell.var(ddof=1) - target_var) < 0.05 * target_var


def test_slice_covariance_at_unit_distance(slices_1d):
    lat, spec, cov, dt, slices = slices_1d
    vals = np.stack([s.values for s in slices])
    prod = (vals * np.roll(vals, 4, axis=1)).mean(axis=1)  # lag 4 = distance 1
    assert prod.mean() == pytest.approx(dt * 1.0, rel=0.10)


def test_covariance_diagnostic_band(slices_1d):
    lat, spec, cov, dt, slices = slices_1d
    # distances from h up to L/2
    lags = [(0,), (1,), (2,), (4,), (8,), (16,), (32,)]
    rep = covariance_diagnostic(slices, lags, spec, dt)
    assert rep.all_within_band
    for row in rep.rows:
        assert 0.9 <= row.ratio <= 1.1


def test_covariance_diagnostic_determinism(slices_1d):
    lat, spec, cov, dt, _ = slices_1d
    a = [sample_slice(cov, dt, stream_for(5, i, 0)) for i in range(200)]
    b = [sample_slice(cov, dt, stream_for(5, i, 0)) for i in range(200)]
    ra = covariance_diagnostic(a, [(0,), (3,)], spec, dt)
    rb = covariance_diagnostic(b, [(0,), (3,)], spec, dt)
    for x, y in zip(ra.rows, rb.rows):
        assert x.empirical == y.empirical


def test_covariance_diagnostic_errors(slices_1d):
    lat, spec, cov, dt, slices = slices_1d
    with pytest.raises(ValueError, match="empty lag"):
        covariance_diagnostic(slices, [], spec, dt)
    with pytest.raises(ValueError, match="100 slices"):
        covariance_diagnostic(slices[:50], [(0,)], spec, dt)


def test_dt_scaling_is_exact_per_stream(slices_1d):
    lat, spec, cov, dt, _ = slices_1d
    a = np.stack([sample_slice(cov, dt, stream_for(3, i, 0)).values
                  for i in range(500)])
    b = np.stack([sample_slice(cov, 2 * dt, stream_for(3, i, 0)).values
                  for i in range(500)])
    # same stream: doubling dt scales every slice by sqrt(2), so every
    # empirical second moment doubles
    assert np.allclose((b ** 2).mean(axis=0), 2 * (a ** 2).mean(axis=0),
                       rtol=1e-12)


def test_isotropy_d2():
    lat = Lattice(d=2, n=32, L=4.0)
    spec = RieszSpec(2, 1.0)
    cov = build_embedding(lat, spec)
    dt = 0.01
    vals = np.stack([sample_slice(cov, dt, stream_for(21, i, 0)).values
                     for i in range(3000)])
    def lag_cov(la, lb):
        prod = (vals * np.roll(vals, (la, lb), axis=(1, 2))).mean(axis=(1, 2))
        return prod.mean(), prod.std(ddof=1) / np.sqrt(len(prod))
    # lags (3,4) and (5,0) have identical Euclidean length 5h
    c1, s1 = lag_cov(3, 4)
    c2, s2 = lag_cov(5, 0)
    assert abs(c1 - c2) < 4 * np.hypot(s1, s2)


def test_sample_slice_rejects_bad_dt(slices_1d):
    lat, spec, cov, dt, _ = slices_1d
    with pytest.raises(ValueError):
        sample_slice(cov, 0.0, stream_for(0, 0, 0))
