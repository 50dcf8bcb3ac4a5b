import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hitgap.errors import ConfigError, InfiniteMass, NonIncreasingScale
from hitgap.model import DiffusionSpec, Tolerances, build_scale, build_speed, certify_recurrence

from conftest import MASS_DW, MASS_OU1, MASS_OU2, OU_Q25, S_OU1_AT_1


class TestScale:
    def test_zero_drift_identity_scale(self, bm_unit):
        S = build_scale(bm_unit)
        xs = np.linspace(0, 1, 11)
        assert np.allclose(S(xs), xs, atol=1e-12)

    def test_ou_scale_value(self, ou1):
        S = build_scale(ou1)
        assert abs(float(S(1.0)) - S_OU1_AT_1) < 1e-10

    def test_scale_vanishes_at_reference(self, ou1):
        assert float(build_scale(ou1)(0.0)) == 0.0

    def test_odd_drift_gives_odd_scale(self, ou1, double_well):
        for spec in (ou1, double_well):
            S = build_scale(spec)
            xs = np.linspace(0.1, 3.0, 17)
            assert np.allclose(S(-xs), -np.asarray(S(xs)), rtol=1e-9)

    def test_strictly_increasing_on_nodes(self, ou1, double_well, heavy_tail):
        for spec in (ou1, double_well, heavy_tail):
            S = build_scale(spec)
            assert np.all(np.diff(S.node_values) > 0)

    def test_inverse(self, ou1):
        S = build_scale(ou1)
        for x in (-2.0, -0.3, 0.7, 1.9):
            assert abs(S.inverse(float(S(x))) - x) < 1e-9

    def test_density_positive(self, ou1):
        S = build_scale(ou1)
        xs = np.linspace(*S.window, 101)
        assert np.all(np.asarray(S.density(xs)) > 0)


class TestSpeed:
    def test_ou_density_pointwise(self, ou1):
        m = build_speed(ou1)
        xs = np.linspace(-4, 4, 33)
        assert np.max(np.abs(np.asarray(m.density(xs)) - np.exp(-xs ** 2 / 2))) < 1e-10

    def test_ou_total_mass(self, ou1):
        assert abs(build_speed(ou1).total_mass - MASS_OU1) < 1e-9

    def test_ou2_total_mass(self, ou2):
        assert abs(build_speed(ou2).total_mass - MASS_OU2) < 1e-9

    def test_double_well_total_mass(self, double_well):
        assert abs(build_speed(double_well).total_mass - MASS_DW) < 1e-8

    def test_brownian_infinite_mass(self):
        bm = DiffusionSpec.from_sde(lambda x: 0.0, lambda x: 1.0)
        with pytest.raises(InfiniteMass):
            build_speed(bm)

    def test_atom_adds_exact_mass(self, ou1):
        withatom = DiffusionSpec.from_sde(lambda x: -x, lambda x: np.sqrt(2.0),
                                          atoms=[(0.0, 0.5)])
        base = build_speed(ou1)
        m = build_speed(withatom)
        assert abs(m.total_mass - base.total_mass - 0.5) < 1e-9
        jump = float(m.cumulative(0.0)) - float(m.cumulative(-1e-12))
        assert abs(jump - 0.5) < 1e-9
        # open upper tail at the atom position excludes the atom
        assert abs(float(m.mass_above_open(0.0)) - base.total_mass / 2) < 1e-8

    def test_quantiles(self, ou1):
        m = build_speed(ou1)
        assert abs(m.quantile(0.5)) < 1e-8
        assert abs(m.quantile(0.25) - OU_Q25) < 1e-8

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-6, 6), min_size=2, max_size=8))
    def test_cumulative_nondecreasing(self, ts):
        spec = DiffusionSpec.from_sde(lambda x: -x, lambda x: np.sqrt(2.0))
        m = build_speed(spec)
        ts = np.sort(np.asarray(ts))
        assert np.all(np.diff(m.cumulative(ts)) >= -1e-12)

    def test_mass_closed_includes_endpoint_atoms(self):
        spec = DiffusionSpec.from_sde(lambda x: -x, lambda x: np.sqrt(2.0),
                                      atoms=[(-1.0, 0.25), (1.0, 0.25)])
        m = build_speed(spec)
        without = DiffusionSpec.from_sde(lambda x: -x, lambda x: np.sqrt(2.0))
        base = build_speed(without).cumulative(1.0) - build_speed(without).cumulative(-1.0)
        assert abs(m.mass_closed(-1.0, 1.0) - float(base) - 0.5) < 1e-9


class TestCertificate:
    def test_ou_passes(self, ou1):
        cert = certify_recurrence(ou1)
        assert cert.passed
        assert cert.scale_diverges_left and cert.scale_diverges_right and cert.finite_mass

    def test_brownian_fails_finite_mass(self):
        bm = DiffusionSpec.from_sde(lambda x: 0.0, lambda x: 1.0)
        cert = certify_recurrence(bm)
        assert not cert.finite_mass
        assert not cert.passed

    def test_double_well_passes(self, double_well):
        assert certify_recurrence(double_well).passed

    def test_interval_domain_never_certifies(self, bm_unit):
        cert = certify_recurrence(bm_unit)
        assert not cert.scale_diverges_left and not cert.scale_diverges_right
        assert cert.finite_mass
        assert not cert.passed

    def test_tail_mass_small(self, ou1):
        cert = certify_recurrence(ou1)
        total = build_speed(ou1).total_mass
        assert cert.tail_mass_left + cert.tail_mass_right < 1e-9 * total


class TestTables:
    def test_tabulated_roundtrip(self):
        xs = np.linspace(-1, 1, 41)
        spec = DiffusionSpec.from_tables((xs, xs ** 3 + 2 * xs), (xs, np.full_like(xs, 0.5)),
                                         window=(-1, 1), domain="interval")
        S = build_scale(spec)
        m = build_speed(spec)
        assert abs(float(S(0.5)) - (0.5 ** 3 + 1.0)) < 1e-12
        assert abs(m.total_mass - 1.0) < 1e-12

    def test_non_monotone_scale_rejected(self):
        xs = np.array([0.0, 0.5, 1.0])
        with pytest.raises(NonIncreasingScale):
            DiffusionSpec.from_tables((xs, np.array([0.0, 1.0, 0.5])),
                                      (xs, np.ones(3)), window=(0, 1))

    def test_negative_density_rejected(self):
        xs = np.array([0.0, 0.5, 1.0])
        with pytest.raises(ConfigError):
            DiffusionSpec.from_tables((xs, xs), (xs, np.array([1.0, -1.0, 1.0])),
                                      window=(0, 1))


class TestSpecValidation:
    def test_requires_exactly_one_form(self):
        with pytest.raises(ConfigError):
            DiffusionSpec()
        with pytest.raises(ConfigError):
            DiffusionSpec(drift=lambda x: 0.0)

    def test_sigma_must_be_positive(self):
        spec = DiffusionSpec.from_sde(lambda x: 0.0, lambda x: x, window=(-1, 1),
                                      domain="interval")
        with pytest.raises(ConfigError):
            build_scale(spec)

    def test_bad_window(self):
        with pytest.raises(ConfigError):
            DiffusionSpec.from_sde(lambda x: 0.0, lambda x: 1.0, window=(1, -1))

    def test_x0_outside_window(self):
        with pytest.raises(ConfigError):
            DiffusionSpec.from_sde(lambda x: 0.0, lambda x: 1.0, window=(1, 2), x0=0.0)


def test_refined_tolerance_stability(ou1):
    """Rebuilding with a tighter quadrature tolerance barely moves S and M."""
    loose = DiffusionSpec.from_sde(lambda x: -x, lambda x: np.sqrt(2.0),
                                   tolerances=Tolerances(quad_rel=1e-6))
    xs = np.linspace(-3, 3, 13)
    S1, S2 = build_scale(loose), build_scale(ou1)
    M1, M2 = build_speed(loose), build_speed(ou1)
    assert np.max(np.abs(np.asarray(S1(xs)) - np.asarray(S2(xs)))) < 1e-6 * float(S2(3.0))
    assert np.max(np.abs(np.asarray(M1.cumulative(xs)) - np.asarray(M2.cumulative(xs)))) < 1e-6
