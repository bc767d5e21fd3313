import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from burgerslab.exceptions import ConfigurationError
from burgerslab.noise import (
    BasisFamily,
    GridSpec,
    generate_rectangle_noise,
    generate_series_noise,
    overlap_area,
    read_noise_dump,
    rectangle_sum,
    validate_covariance,
    write_noise_dump,
)


def small_grid(n_x=64, n_t=64, boundary="periodic"):
    return GridSpec(x_min=0.0, x_max=4.0, n_x=n_x, t_end=1.0, n_t=n_t, boundary=boundary)


class TestGridSpec:
    def test_spacings(self):
        g = GridSpec(-8.0, 8.0, 512, 1.0, 4096)
        assert g.dx == pytest.approx(16.0 / 512)
        assert g.dt == pytest.approx(1.0 / 4096)
        assert len(g.x_centers()) == 512

    def test_invalid_extent(self):
        with pytest.raises(ConfigurationError):
            GridSpec(1.0, 1.0, 16, 1.0, 16)

    def test_invalid_counts(self):
        with pytest.raises(ConfigurationError):
            GridSpec(0.0, 1.0, 0, 1.0, 16)
        with pytest.raises(ConfigurationError):
            GridSpec(0.0, 1.0, 16, -1.0, 16)

    def test_bad_boundary(self):
        with pytest.raises(ConfigurationError):
            GridSpec(0.0, 1.0, 16, 1.0, 16, boundary="free")


class TestRectangleNoise:
    def test_determinism(self):
        g = small_grid()
        a = generate_rectangle_noise(g, 12345)
        b = generate_rectangle_noise(g, 12345)
        assert np.array_equal(a.increments, b.increments)
        c = generate_rectangle_noise(g, 12346)
        assert not np.array_equal(a.increments, c.increments)

    def test_entry_variance(self):
        # dt = 0.01, dx = 0.1 -> variance 0.001, over >= 1e6 entries
        g = GridSpec(0.0, 102.4, 1024, 10.24, 1024)
        assert g.dt == pytest.approx(0.01)
        assert g.dx == pytest.approx(0.1)
        field = generate_rectangle_noise(g, 7)
        n = field.increments.size
        assert n >= 10 ** 6
        var = field.increments.var()
        # sample variance of N(0, s2): stderr = s2 * sqrt(2/n)
        se = 0.001 * np.sqrt(2.0 / n)
        assert abs(var - 0.001) < 3 * se

    def test_rectangle_sum_variance(self):
        # Var W([0,2] x [0,3]) = 6, estimated over an ensemble
        g = GridSpec(0.0, 4.0, 64, 2.0, 64)
        n_fields = 4000
        sums = np.array([
            rectangle_sum(generate_rectangle_noise(g, s), (0.0, 2.0), (0.0, 3.0))
            for s in range(n_fields)
        ])
        var = sums.var()
        se = 6.0 * np.sqrt(2.0 / n_fields)
        assert abs(var - 6.0) < 3 * se

    def test_kurtosis_is_gaussian(self):
        g = GridSpec(0.0, 102.4, 1024, 10.24, 1024)
        z = generate_rectangle_noise(g, 99).increments.ravel() / np.sqrt(g.dt * g.dx)
        kurt = stats.kurtosis(z, fisher=False)
        se = np.sqrt(24.0 / z.size)
        assert abs(kurt - 3.0) < 5 * se


class TestBasis:
    @pytest.mark.parametrize("kind,boundary", [
        ("trigonometric", "periodic"),
        ("haar", "dirichlet_zero"),
    ])
    @pytest.mark.parametrize("n_modes", [1, 17, 64])
    def test_orthonormality(self, kind, boundary, n_modes):
        g = small_grid(boundary=boundary)
        fam = BasisFamily(kind, n_modes, g)
        mat = fam.matrix()
        gram = mat @ mat.T * g.dx
        assert np.abs(gram - np.eye(n_modes)).max() < 1e-10

    def test_bounded_on_grid(self):
        g = small_grid()
        for kind in ("trigonometric", "haar"):
            mat = BasisFamily(kind, 64, g).matrix()
            assert np.isfinite(mat).all()
            assert np.abs(mat).max() < np.sqrt(2 * g.n_x / g.length) + 1.0

    def test_aliased_basis_rejected(self):
        g = small_grid()
        with pytest.raises(ConfigurationError):
            BasisFamily("trigonometric", 65, g)

    def test_haar_needs_power_of_two(self):
        g = GridSpec(0.0, 4.0, 48, 1.0, 16)
        with pytest.raises(ConfigurationError):
            BasisFamily("haar", 8, g)


class TestSeriesNoise:
    def test_single_constant_mode_is_flat_in_x(self):
        g = small_grid()
        fam = BasisFamily("trigonometric", 1, g)
        field = generate_series_noise(g, fam, 3)
        spread = np.ptp(field.increments, axis=1)
        assert spread.max() < 1e-14

    def test_determinism(self):
        g = small_grid()
        fam = BasisFamily("trigonometric", 64, g)
        a = generate_series_noise(g, fam, 11)
        b = generate_series_noise(g, fam, 11)
        assert np.array_equal(a.increments, b.increments)

    def test_grid_mismatch(self):
        fam = BasisFamily("trigonometric", 16, small_grid())
        with pytest.raises(ConfigurationError):
            generate_series_noise(small_grid(n_x=32, n_t=32), fam, 0)

    def test_full_mode_matches_rectangle_covariance(self):
        # Full-mode series and rectangle constructions share second-order
        # statistics: entry variance dt*dx and vanishing cross-covariance.
        g = small_grid(n_x=32, n_t=32)
        fam = BasisFamily("trigonometric", 32, g)
        n_fields = 4000
        probes = [(4, 7), (4, 8), (20, 31)]
        rect = np.array([[generate_rectangle_noise(g, s).increments[n, j]
                          for (n, j) in probes] for s in range(n_fields)])
        seri = np.array([[generate_series_noise(g, fam, 10 ** 6 + s).increments[n, j]
                          for (n, j) in probes] for s in range(n_fields)])
        target = g.dt * g.dx
        se_var = target * np.sqrt(2.0 / n_fields)
        for col in range(len(probes)):
            assert abs(rect[:, col].var() - target) < 4 * se_var
            assert abs(seri[:, col].var() - target) < 4 * se_var
        # same-time neighbor cells: correlation compatible with zero
        for arr in (rect, seri):
            r = np.corrcoef(arr[:, 0], arr[:, 1])[0, 1]
            assert abs(r) < 4 / np.sqrt(n_fields)

    def test_nearby_cells_uncorrelated_full_mode(self):
        g = small_grid(n_x=32, n_t=8)
        fam = BasisFamily("trigonometric", 32, g)
        vals = np.array([generate_series_noise(g, fam, s).increments[3, 10:12]
                         for s in range(3000)])
        r = np.corrcoef(vals[:, 0], vals[:, 1])[0, 1]
        assert abs(r) < 4 / np.sqrt(len(vals))


class TestValidateCovariance:
    def test_targets(self):
        g = GridSpec(0.0, 4.0, 128, 2.0, 128)
        pairs = [
            (((0.0, 1.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 1.0))),   # identical: 1
            (((0.0, 1.0), (0.0, 1.0)), ((1.0, 2.0), (2.0, 3.0))),   # disjoint: 0
            (((0.0, 1.0), (0.0, 2.0)), ((0.0, 1.0), (1.0, 3.0))),   # overlap: 1
        ]
        fields = (generate_rectangle_noise(g, s) for s in range(1500))
        report = validate_covariance(fields, pairs)
        assert [r["target"] for r in report] == [1.0, 0.0, 1.0]
        for r in report:
            assert abs(r["z"]) < 5.0

    def test_empty_ensemble(self):
        pairs = [(((0.0, 1.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 1.0)))]
        with pytest.raises(ValueError):
            validate_covariance(iter(()), pairs)

    def test_small_ensemble_rejected(self):
        g = small_grid(n_x=8, n_t=8)
        pairs = [(((0.0, 1.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 1.0)))]
        fields = (generate_rectangle_noise(g, s) for s in range(10))
        with pytest.raises(ValueError):
            validate_covariance(fields, pairs)

    def test_overlap_area(self):
        g = GridSpec(0.0, 4.0, 128, 2.0, 128)
        area = overlap_area(g, ((0.0, 1.0), (0.0, 2.0)), ((0.0, 1.0), (1.0, 3.0)))
        assert area == pytest.approx(1.0)


class TestDump:
    def test_roundtrip(self, tmp_path):
        g = small_grid(n_x=16, n_t=8)
        field = generate_rectangle_noise(g, 5)
        path = tmp_path / "field.stwn"
        write_noise_dump(path, field)
        inc, meta = read_noise_dump(path)
        assert np.array_equal(inc, field.increments)
        assert meta["n_t"] == 8 and meta["n_x"] == 16
        assert meta["dx"] == pytest.approx(g.dx)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            read_noise_dump(path)


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2 ** 63 - 1),
    n_x=st.sampled_from([8, 16, 32]),
    n_t=st.integers(min_value=1, max_value=16),
)
def test_determinism_property(seed, n_x, n_t):
    g = GridSpec(0.0, 2.0, n_x, 0.5, n_t)
    a = generate_rectangle_noise(g, seed)
    b = generate_rectangle_noise(g, seed)
    assert np.array_equal(a.increments, b.increments)
    fam = BasisFamily("trigonometric", n_x, g)
    sa = generate_series_noise(g, fam, seed)
    sb = generate_series_noise(g, fam, seed)
    assert np.array_equal(sa.increments, sb.increments)
