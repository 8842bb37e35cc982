import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paprlab import waveform as wf


@pytest.fixture(scope="module")
def grid75():
    return wf.build_grid(75, 5)


@pytest.fixture(scope="module")
def gram75(grid75):
    return wf.compute_gram(grid75)


def random_symbols(rng, shape, n):
    return rng.standard_normal(shape + (n,)) + 1j * rng.standard_normal(shape + (n,))


class TestGrid:
    def test_paper_dimensions(self):
        g = wf.build_grid(75, 5)
        assert g.indices[0] == -37 and g.indices[-1] == 37
        assert g.n_samples == 375

    def test_smallest_grid(self):
        g = wf.build_grid(3, 1)
        assert list(g.indices) == [-1, 0, 1]
        assert g.n_samples == 3

    def test_alternate_oversampling(self):
        assert wf.build_grid(75, 4).n_samples == 300

    @pytest.mark.parametrize("n,os_", [(4, 1), (0, 1), (-3, 1), (2, 2)])
    def test_rejects_bad_subcarrier_count(self, n, os_):
        with pytest.raises(ValueError):
            wf.build_grid(n, os_)

    def test_rejects_bad_oversampling(self):
        with pytest.raises(ValueError):
            wf.build_grid(3, 0)


class TestToTime:
    def test_single_tone_is_flat(self):
        for os_ in (1, 3, 5):
            g = wf.build_grid(5, os_)
            x = np.zeros(5, complex)
            x[2] = 1.0  # center subcarrier
            z = wf.to_time(x, g)
            np.testing.assert_allclose(np.abs(z) ** 2, 1.0 / g.n_samples, rtol=1e-12)

    def test_unitarity_all_ones(self):
        g = wf.build_grid(3, 1)
        z = wf.to_time(np.ones(3), g)
        assert np.sum(np.abs(z) ** 2) == pytest.approx(3.0, rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_unitarity_random(self, seed):
        rng = np.random.default_rng(seed)
        g = wf.build_grid(15, 3)
        x = random_symbols(rng, (), 15)
        z = wf.to_time(x, g)
        assert np.sum(np.abs(z) ** 2) == pytest.approx(
            np.sum(np.abs(x) ** 2), rel=1e-9
        )

    def test_zero_maps_to_zero(self, grid75):
        assert np.all(wf.to_time(np.zeros(75), grid75) == 0)

    def test_length_mismatch(self, grid75):
        with pytest.raises(ValueError):
            wf.to_time(np.ones(74), grid75)

    def test_oversampling_reveals_higher_peaks(self):
        # Fig.-1 style check: the O_s=5 peak exceeds the O_s=1 peak for the
        # overwhelming majority of random 16-QAM draws.
        rng = np.random.default_rng(1234)
        n_trials = 10_000
        levels = np.array([-3, -1, 1, 3]) / np.sqrt(10)
        x = rng.choice(levels, (n_trials, 75)) + 1j * rng.choice(
            levels, (n_trials, 75)
        )
        g1 = wf.build_grid(75, 1)
        g5 = wf.build_grid(75, 5)
        # compare physical peak powers: unitary samples rescaled by N*O_s
        p1 = 75 * np.max(np.abs(wf.to_time(x, g1)) ** 2, axis=-1)
        p5 = 375 * np.max(np.abs(wf.to_time(x, g5)) ** 2, axis=-1)
        # the O_s=1 midpoint grid is nested in the O_s=5 grid, so the
        # oversampled peak dominates always and strictly on most draws
        assert np.all(p5 >= p1 - 1e-9)
        assert np.mean(p5 > p1) >= 0.90


class TestGram:
    def test_w_is_identity(self, gram75):
        assert np.array_equal(gram75.W, np.eye(75))

    def test_v00_against_brute_force_oracle(self):
        gram = wf.compute_gram(wf.build_grid(3, 1))
        u = np.linspace(-1.5, 1.5, 3_000_001)
        oracle = np.trapezoid(np.sinc(u) ** 2, u)
        assert gram.V[1, 1] == pytest.approx(oracle, abs=1e-6)

    def test_center_leaks_less_than_edge(self, gram75):
        center = gram75.V[37, 37]
        edge = gram75.V[74, 74]
        assert center > edge

    def test_v_symmetric_psd_bounded(self, gram75):
        v = gram75.V
        assert np.array_equal(v, v.T)
        assert np.all(np.linalg.eigvalsh(v) > -1e-10)
        assert np.all(v <= 1.0 + 1e-12) and np.all(v >= -1.0 - 1e-12)
        assert np.all(np.diag(v) > 0) and np.all(np.diag(v) <= 1.0)

    def test_rejects_coarse_quadrature(self, grid75):
        with pytest.raises(ValueError):
            wf.compute_gram(grid75, nodes_per_unit=32)


class TestEnergies:
    def test_zero_vector(self, gram75):
        e_in, e_tot = wf.energies(np.zeros(75), gram75)
        assert e_in == 0 and e_tot == 0

    def test_basis_vector(self):
        gram = wf.compute_gram(wf.build_grid(3, 1))
        e_in, e_tot = wf.energies(np.array([0, 1.0, 0]), gram)
        assert e_tot == pytest.approx(1.0)
        assert e_in == pytest.approx(gram.V[1, 1])

    def test_unit_norm_total_energy(self, gram75):
        rng = np.random.default_rng(7)
        x = random_symbols(rng, (), 75)
        x /= np.linalg.norm(x)
        _, e_tot = wf.energies(x, gram75)
        assert e_tot == pytest.approx(1.0, abs=1e-12)

    def test_inband_never_exceeds_total(self, gram75):
        rng = np.random.default_rng(8)
        x = random_symbols(rng, (100,), 75)
        e_in, e_tot = wf.energies(x, gram75)
        assert np.all(e_in <= e_tot + 1e-9)

    def test_dimension_mismatch(self, gram75):
        with pytest.raises(ValueError):
            wf.energies(np.ones(10), gram75)


class TestAclr:
    def test_iid_batch_approaches_trace_form(self, gram75):
        rng = np.random.default_rng(42)
        x = random_symbols(rng, (4000,), 75) / np.sqrt(2)
        expected = 75.0 / np.trace(gram75.V) - 1.0
        assert wf.aclr(x, gram75) == pytest.approx(expected, rel=0.05)

    def test_single_basis_vector(self):
        gram = wf.compute_gram(wf.build_grid(3, 1))
        x = np.array([[0, 1.0, 0]])
        assert wf.aclr(x, gram) == pytest.approx(1.0 / gram.V[1, 1] - 1.0)

    def test_nonnegative_and_scale_invariant(self, gram75):
        rng = np.random.default_rng(43)
        x = random_symbols(rng, (50,), 75)
        a = wf.aclr(x, gram75)
        assert a >= 0
        assert wf.aclr(7.5 * x, gram75) == pytest.approx(a, rel=1e-12)

    def test_empty_batch(self, gram75):
        with pytest.raises(ValueError):
            wf.aclr(np.zeros((0, 75)), gram75)


class TestPaprEpsilon:
    def test_constant_envelope_is_zero_db(self):
        z = np.exp(1j * np.linspace(0, 20, 5000)).reshape(10, 500)
        for eps in (0.5, 1e-1, 1e-2):
            assert wf.papr_epsilon(z, eps) == pytest.approx(0.0, abs=1e-9)

    def test_monotone_in_epsilon(self, grid75):
        rng = np.random.default_rng(5)
        z = wf.to_time(random_symbols(rng, (200,), 75), grid75)
        values = [wf.papr_epsilon(z, e) for e in (1e-3, 1e-2, 1e-1, 0.5)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_epsilon_one_limit_is_minimum(self):
        z = np.array([[1.0, 2.0, 3.0, 4.0]])
        p = np.abs(z.ravel()) ** 2
        p = p / p.mean()
        near_one = wf.papr_epsilon(z, 1 - 1e-12)
        assert near_one == pytest.approx(wf.db(p.min()))

    def test_rejects_bad_epsilon(self):
        z = np.ones((1, 8))
        for eps in (0.0, 1.0, -0.1, 2.0):
            with pytest.raises(ValueError):
                wf.papr_epsilon(z, eps)

    def test_undersized_batch_warns(self):
        z = np.random.default_rng(0).standard_normal((1, 50))
        with pytest.warns(UserWarning):
            wf.papr_epsilon(z, 1e-4)


class TestCcdf:
    def test_boundary_probabilities(self, grid75):
        rng = np.random.default_rng(6)
        z = wf.to_time(random_symbols(rng, (20,), 75), grid75)
        p = np.abs(z) ** 2
        p = p / p.mean()
        curve = wf.ccdf_power(z, np.array([0.0, p.max() + 1.0]))
        assert curve.probabilities[0] == 1.0
        assert curve.probabilities[-1] == 0.0

    def test_non_increasing_and_bounded(self, grid75):
        rng = np.random.default_rng(9)
        z = wf.to_time(random_symbols(rng, (50,), 75), grid75)
        curve = wf.ccdf_power(z, np.linspace(0, 20, 100))
        assert np.all(np.diff(curve.probabilities) <= 0)
        assert np.all((curve.probabilities >= 0) & (curve.probabilities <= 1))

    def test_rejects_unsorted_thresholds(self):
        with pytest.raises(ValueError):
            wf.ccdf_power(np.ones((1, 4)), np.array([1.0, 0.5]))

    def test_csv_round_trip(self, tmp_path):
        curve = wf.ccdf_power(np.array([[1.0, 2.0, 3.0]]), np.array([0.0, 1.0]))
        path = tmp_path / "ccdf.csv"
        curve.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "threshold,probability"
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        np.testing.assert_allclose(data[:, 0], curve.thresholds)
        np.testing.assert_allclose(data[:, 1], curve.probabilities)


class TestPsd:
    def test_single_tone_peaks_at_zero(self, grid75):
        x = np.zeros((1, 75), complex)
        x[0, 37] = 1.0
        curve = wf.psd_estimate(x, grid75)
        assert curve.freqs[np.argmax(curve.density)] == pytest.approx(0.0)

    def test_axis_symmetric_density_nonnegative(self, grid75):
        rng = np.random.default_rng(11)
        curve = wf.psd_estimate(random_symbols(rng, (10,), 75), grid75)
        np.testing.assert_allclose(curve.freqs, -curve.freqs[::-1])
        assert np.all(curve.density >= 0)

    def test_cross_checks_gram_aclr(self, grid75, gram75):
        rng = np.random.default_rng(12)
        levels = np.array([-3, -1, 1, 3]) / np.sqrt(10)
        x = rng.choice(levels, (500, 75)) + 1j * rng.choice(levels, (500, 75))
        curve = wf.psd_estimate(x, grid75, points_per_subcarrier=16)
        ratio = wf.psd_band_ratio(curve, 75)
        assert abs(wf.db(ratio) - wf.db(wf.aclr(x, gram75))) < 1.0

    def test_empty_batch(self, grid75):
        with pytest.raises(ValueError):
            wf.psd_estimate(np.zeros((0, 75)), grid75)
