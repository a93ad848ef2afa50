"""Brownian kernel: determinism, dyadic coupling, refinement, persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdelab import brownian as bw


def test_derive_stream_is_pure():
    key = bw.StreamKey(seed=123, sample_index=7, substream=1)
    a = bw.derive_stream(key).standard_normal(100)
    b = bw.derive_stream(key).standard_normal(100)
    np.testing.assert_array_equal(a, b)


def test_sample_index_streams_decorrelated():
    k0 = bw.StreamKey(seed=5, sample_index=0, substream=0)
    k1 = bw.StreamKey(seed=5, sample_index=1, substream=0)
    x = bw.derive_stream(k0).standard_normal(10_000)
    y = bw.derive_stream(k1).standard_normal(10_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.05


def test_substreams_distinct():
    k0 = bw.StreamKey(seed=5, sample_index=0, substream=0)
    k1 = bw.StreamKey(seed=5, sample_index=0, substream=1)
    assert not np.array_equal(
        bw.derive_stream(k0).standard_normal(8),
        bw.derive_stream(k1).standard_normal(8),
    )


def test_batch_rows_equal_single_streams():
    idx = [0, 3, 17, 2**40]
    batch = bw.batch_standard_normals(99, idx, substream=2, count=37)
    assert batch.shape == (4, 37)
    for row, i in zip(batch, idx):
        key = bw.StreamKey(seed=99, sample_index=i, substream=2)
        np.testing.assert_array_equal(row, bw.derive_stream(key).standard_normal(37))


def test_stream_key_validation():
    with pytest.raises(ValueError):
        bw.StreamKey(seed=-1, sample_index=0, substream=0)
    with pytest.raises(ValueError):
        bw.StreamKey(seed=0, sample_index=-2, substream=0)


def test_time_grid_nodes_exact():
    grid = bw.TimeGrid(T=5.0, n=7)
    nodes = grid.nodes()
    assert len(nodes) == 8
    assert nodes[0] == 0.0
    assert nodes[-1] == 5.0  # forced, no cumulative rounding
    assert grid.dt == 5.0 / 7
    with pytest.raises(ValueError):
        bw.TimeGrid(T=1.0, n=0)


def test_lattice_rejects_non_power_of_two():
    key = bw.StreamKey(1, 0, 0)
    with pytest.raises(bw.LatticeError):
        bw.sample_lattice(key, T=1.0, m=1, finest_n=12)


def test_single_increment_variance():
    # T=4, one step: increments over many lattices should have variance ~4
    draws = bw.batch_standard_normals(7, range(100_000), 0, 1) * math.sqrt(4.0)
    var = draws.var()
    assert abs(var - 4.0) < 0.2  # 5%


def test_increment_mean_clt_bound():
    lat = bw.sample_lattice(bw.StreamKey(11, 0, 0), T=1.0, m=1, finest_n=2**20)
    sigma = math.sqrt(1.0 / 2**20)
    assert abs(lat.increments.mean()) < 4 * sigma / math.sqrt(2**20)


def test_dimensions_uncorrelated():
    lat = bw.sample_lattice(bw.StreamKey(13, 4, 0), T=1.0, m=2, finest_n=2**14)
    rho = np.corrcoef(lat.increments[0], lat.increments[1])[0, 1]
    assert abs(rho) < 0.05


def test_increments_at_identity_and_sums():
    lat = bw.sample_lattice(bw.StreamKey(3, 1, 0), T=2.0, m=1, finest_n=4)
    np.testing.assert_array_equal(bw.increments_at(lat, 4), lat.increments)
    coarse = bw.increments_at(lat, 2)
    np.testing.assert_array_equal(
        coarse, lat.increments[:, ::2] + lat.increments[:, 1::2]
    )
    # same W_T at every resolution: the pairwise tower makes the total sum
    # bit-identical no matter which level it is taken from
    w_T = bw.increments_at(lat, 1)
    for n in (2, 4):
        np.testing.assert_array_equal(bw.aggregate_to(bw.increments_at(lat, n), 1), w_T)
    with pytest.raises(bw.LatticeError):
        bw.increments_at(lat, 3)


@given(
    log_n=st.integers(min_value=0, max_value=8),
    log_k=st.integers(min_value=0, max_value=8),
    seed=st.integers(min_value=0, max_value=2**32),
)
def test_aggregation_tower_is_exact(log_n, log_k, seed):
    # aggregating in one hop or through any intermediate resolution is
    # bit-identical: coarse sums are pair-sums of pair-sums by construction
    n_fine = 2 ** (log_n + log_k)
    arr = np.random.default_rng(seed).standard_normal((2, n_fine))
    direct = bw.aggregate_to(arr, 2**log_n)
    staged = arr
    for _ in range(log_k):
        staged = bw.halve_pairs(staged)
    np.testing.assert_array_equal(direct, staged)


def test_brownian_path_endpoint_shared_across_resolutions():
    lat = bw.sample_lattice(bw.StreamKey(17, 2, 0), T=3.0, m=1, finest_n=64)
    # block sums agree bit-for-bit; cumsum endpoints only up to association
    # order of the running sum, so the path check is near-exact, not exact
    w_T = bw.increments_at(lat, 1)[0, 0]
    for n in (1, 4, 16, 64):
        assert bw.aggregate_to(bw.increments_at(lat, n), 1)[0, 0] == w_T
        end = bw.brownian_path(lat, n)[0, -1]
        assert math.isclose(end, w_T, rel_tol=1e-12)


def test_bridge_refine_preserves_coarse_lattice():
    # the second child is the float remainder d - c1, so each pair re-sums to
    # the parent up to one rounding at the child magnitude (exact whenever the
    # remainder is representable, which is the typical case)
    key = bw.StreamKey(21, 0, 0)
    lat = bw.sample_lattice(key, T=1.0, m=2, finest_n=8)
    fine = bw.bridge_refine(lat, bw.StreamKey(21, 0, 7))
    assert fine.finest_n == 16
    child_scale = np.maximum(
        np.abs(fine.increments[:, 0::2]), np.abs(fine.increments[:, 1::2])
    )
    err = np.abs(bw.aggregate_to(fine.increments, 8) - lat.increments)
    assert np.all(err <= np.spacing(child_scale))
    assert np.mean(err == 0.0) > 0.5
    # a second refinement still reproduces the original resolution to a few
    # ulp of the finest child scale
    finer = bw.bridge_refine(fine, bw.StreamKey(21, 0, 8))
    err2 = np.abs(bw.increments_at(finer, 8) - lat.increments)
    assert np.all(err2 <= 4.0 * np.spacing(np.max(np.abs(finer.increments))))


def test_bridge_refine_variance():
    # refined increments should be N(0, dt/2): check the sample variance
    fine = bw.bridge_refine(
        bw.sample_lattice(bw.StreamKey(31, 0, 0), T=1.0, m=1, finest_n=2**16),
        bw.StreamKey(31, 0, 9),
    )
    var = fine.increments.var()
    dt_new = 1.0 / 2**17
    assert abs(var - dt_new) / dt_new < 0.05


def test_normalized_increments_pass_ks():
    lat = bw.sample_lattice(bw.StreamKey(41, 0, 0), T=2.0, m=1, finest_n=2**14)
    z = np.sort(lat.increments[0][:10_000] / math.sqrt(2.0 / 2**14))
    n = len(z)
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
    grid = np.arange(1, n + 1) / n
    d_stat = max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n)))
    crit = math.sqrt(-0.5 * math.log(0.001 / 2.0)) / math.sqrt(n)
    assert d_stat < crit


def test_save_load_roundtrip(tmp_path):
    lat = bw.sample_lattice(bw.StreamKey(51, 3, 0), T=2.5, m=2, finest_n=32)
    path = str(tmp_path / "lattice.bin")
    bw.save_lattice(lat, path)
    back = bw.load_lattice(path)
    assert back.T == lat.T and back.m == lat.m and back.finest_n == lat.finest_n
    np.testing.assert_array_equal(back.increments, lat.increments)
