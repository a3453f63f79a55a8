import math

import numpy as np
import pytest
from scipy.special import ndtr

from riverextremes.errors import DomainError, InputError
from riverextremes.kernels import (
    HrStructure,
    KernelParams,
    KernelVariant,
    NetworkGeometry,
    StationSet,
    anisotropy_matrix,
    bivariate_cdf,
    euclid_kernel,
    extremal_coefficient,
    hr_structure,
    kernel_matrix,
    kernel_value,
    load_kernel_params,
    load_stations,
    river_kernel,
    save_kernel_params,
    save_stations,
)
from riverextremes.network import CatchmentSummary, NetLocation
from riverextremes.toydata import random_basin, toy_kernel_params


class TestAnisotropyMatrix:
    def test_pure_rotation_is_isometry(self):
        r = anisotropy_matrix(math.pi / 2, 1.0)
        np.testing.assert_allclose(r, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.normal(size=2)
            assert np.linalg.norm(r @ v) == pytest.approx(np.linalg.norm(v))

    def test_dilation(self):
        r = anisotropy_matrix(math.pi / 2, 2.0)
        np.testing.assert_allclose(r @ np.array([1.0, 0.0]), [0.0, 2.0], atol=1e-15)

    def test_quarter_turn(self):
        r = anisotropy_matrix(math.pi / 4, 1.0)
        np.testing.assert_allclose(r @ np.array([1.0, 1.0]), [0.0, math.sqrt(2)], atol=1e-12)

    def test_box(self):
        with pytest.raises(DomainError):
            anisotropy_matrix(0.1, 1.0)
        with pytest.raises(DomainError):
            anisotropy_matrix(math.pi / 2, -1.0)


@pytest.fixture(scope="module")
def full_params():
    return KernelParams(
        variant=KernelVariant.FULL,
        lambda_riv=1.0, lambda_euc=1.0, tau=100.0, alpha=1.0, beta=math.pi / 2, c=1.0,
    )


class TestRiverKernel:
    def test_same_point(self, toy_net, full_params):
        loc = NetLocation(2, 30.0)
        assert river_kernel(full_params, toy_net, loc, loc) == 0.0

    def test_unconnected_pair(self, toy_net, full_params):
        assert river_kernel(full_params, toy_net, NetLocation(3, 10.0), NetLocation(5, 10.0)) == 1.0

    def test_half_range_single_junction(self):
        from riverextremes.network import RiverNetwork, Segment

        net = RiverNetwork(
            [
                Segment(1, [(0, 0), (60, 0)], None, 1.0),
                Segment(2, [(60, 0), (60, 60)], 1, 0.25),
                Segment(3, [(60, 0), (120, 0)], 1, 0.75),
            ]
        )
        params = KernelParams(variant=KernelVariant.FULL, lambda_riv=1.0,
                              lambda_euc=1.0, tau=100.0, alpha=1.0)
        # distance 50 = tau/2 across the junction with weight 0.25
        got = river_kernel(params, net, NetLocation(1, 30.0), NetLocation(2, 20.0))
        assert got == pytest.approx(1.0 - 0.5 * 0.5)

    def test_sill_reached(self, toy_net):
        params = KernelParams(variant=KernelVariant.FULL, lambda_riv=1.0,
                              lambda_euc=1.0, tau=50.0, alpha=1.0)
        got = river_kernel(params, toy_net, NetLocation(1, 10.0), NetLocation(1, 95.0))
        assert got == 1.0

    def test_variant_without_river_part(self, toy_net):
        params = KernelParams(variant=KernelVariant.HYDRO)
        with pytest.raises(DomainError):
            river_kernel(params, toy_net, NetLocation(1, 0.0), NetLocation(1, 5.0))


def _summary(hydro, seg=1, off=0.0):
    return CatchmentSummary(
        location=NetLocation(seg, off),
        hydro_position=np.asarray(hydro, float),
        altitude_volume=1.0,
        area=1.0,
        mean_altitude=1.0,
        mean_slope=0.1,
        centroid_latitude=47.0,
    )


class TestEuclidKernel:
    def test_equal_positions(self):
        params = KernelParams(variant=KernelVariant.HYDRO, lambda_euc=1.0, alpha=1.3)
        assert euclid_kernel(params, _summary((3, 4)), _summary((3, 4))) == 0.0

    def test_rotation_invariance_when_c_one(self):
        rng = np.random.default_rng(1)
        for beta in (math.pi / 4, 1.1, math.pi / 2, 2.2):
            params = KernelParams(variant=KernelVariant.HYDRO, alpha=1.5, beta=beta, c=1.0)
            a, b = rng.normal(size=2) * 10, rng.normal(size=2) * 10
            expect = np.linalg.norm(a - b) ** 1.5
            got = euclid_kernel(params, _summary(a), _summary(b))
            assert got == pytest.approx(expect, rel=1e-12)

    def test_anisotropic_value(self):
        params = KernelParams(variant=KernelVariant.HYDRO, alpha=1.0, beta=math.pi / 2, c=2.0)
        got = euclid_kernel(params, _summary((1, 0)), _summary((0, 0)))
        assert got == pytest.approx(2.0)

    def test_euclid_variant_uses_raw_coordinates(self, toy_net):
        params = KernelParams(variant=KernelVariant.EUCLID, alpha=1.0)
        a = _summary((999.0, 999.0), seg=1, off=0.0)
        b = _summary((-999.0, -999.0), seg=1, off=10.0)
        got = euclid_kernel(params, a, b, net=toy_net)
        pa, pb = toy_net.point_at(a.location), toy_net.point_at(b.location)
        assert got == pytest.approx(np.linalg.norm(pa - pb))
        with pytest.raises(InputError):
            euclid_kernel(params, a, b)


class TestCombinedKernel:
    def test_unconnected_combination(self, toy_net):
        params = KernelParams(variant=KernelVariant.FULL, lambda_riv=0.6,
                              lambda_euc=0.02, tau=300.0, alpha=1.4,
                              beta=1.0, c=0.8)
        a = _summary((120, -50), seg=3, off=10.0)
        b = _summary((250, 140), seg=5, off=10.0)
        rot = anisotropy_matrix(1.0, 0.8)
        expect = 0.6 + 0.02 * np.linalg.norm(rot @ (np.array([120, -50]) - [250, 140])) ** 1.4
        assert kernel_value(params, toy_net, a, b) == pytest.approx(expect, rel=1e-12)

    def test_zero_on_diagonal(self, toy_net, toy_sts, toy_geom, theta0):
        gam = kernel_matrix(theta0, toy_geom)
        assert np.all(np.diag(gam) == 0.0)
        np.testing.assert_allclose(gam, gam.T, atol=1e-15)
        assert np.all(gam[~np.eye(len(toy_sts), dtype=bool)] > 0.0)

    def test_matrix_matches_pairwise(self, toy_net, toy_sts, toy_geom, theta0):
        gam = kernel_matrix(theta0, toy_geom)
        for i in (0, 3):
            for j in (5, 9):
                expect = kernel_value(theta0, toy_net, toy_sts.summaries[i], toy_sts.summaries[j])
                assert gam[i, j] == pytest.approx(expect, rel=1e-12)

    def test_fitted_parameters_give_valid_kernel_on_31_stations(self):
        # the published six-parameter estimate must yield PSD anchored
        # covariances on arbitrary station configurations
        for seed in (0, 1, 2):
            net, stations = random_basin(15, 31, seed=seed)
            hr = hr_structure(toy_kernel_params(), net, stations)
            for k in range(hr.m):
                sig = hr.sigma(k)
                assert np.linalg.eigvalsh(sig)[0] >= -1e-12 * max(np.trace(sig), 1.0)


class TestHrStructure:
    def test_two_stations(self):
        hr = HrStructure(np.array([[0.0, 2.5], [2.5, 0.0]]))
        np.testing.assert_allclose(hr.sigma(0), [[2.5]])
        np.testing.assert_allclose(hr.sigma(1), [[2.5]])

    def test_coincident_stations_zero_matrix(self):
        hr = HrStructure(np.zeros((3, 3)))
        np.testing.assert_allclose(hr.sigma(0), np.zeros((2, 2)))

    def test_equidistant_triple(self):
        d = 1.7
        gam = np.full((3, 3), d)
        np.fill_diagonal(gam, 0.0)
        hr = HrStructure(gam)
        np.testing.assert_allclose(hr.sigma(0), [[d, d / 2], [d / 2, d]])

    def test_collinear_equispaced_points(self):
        # fractal kernel with alpha = 1 on points 0, d, 2d anchored at the end
        d = 2.0
        gam = np.array([[0, d, 2 * d], [d, 0, d], [2 * d, d, 0]], dtype=float)
        hr = HrStructure(gam)
        np.testing.assert_allclose(hr.sigma(0), [[d, d], [d, 2 * d]])

    def test_psd_across_box_and_configurations(self):
        rng = np.random.default_rng(9)
        variants = list(KernelVariant)
        for trial in range(12):
            net, stations = random_basin(9, 8, seed=100 + trial)
            geom = NetworkGeometry.from_stations(net, stations)
            params = KernelParams(
                variant=variants[trial % 4],
                lambda_riv=float(rng.uniform(0.0, 3.0)),
                lambda_euc=float(10 ** rng.uniform(-5, -1)),
                tau=float(rng.uniform(50, 2000)),
                alpha=float(rng.uniform(0.1, 2.0)),
                beta=float(rng.uniform(math.pi / 4, 3 * math.pi / 4)),
                c=float(rng.uniform(0.2, 5.0)),
            ).normalized()
            hr = HrStructure(kernel_matrix(params, geom))
            for k in range(hr.m):
                hr.sigma(k)  # raises KernelValidityError on failure

    def test_rejects_invalid_matrix(self):
        with pytest.raises(InputError):
            HrStructure(np.array([[0.0, 1.0], [2.0, 0.0]]))
        with pytest.raises(InputError):
            HrStructure(np.array([[1.0, 1.0], [1.0, 0.0]]))


class TestExtremalCoefficient:
    def test_complete_dependence(self):
        assert extremal_coefficient(0.0) == pytest.approx(1.0)

    def test_independence_limit(self):
        assert extremal_coefficient(1e8) == pytest.approx(2.0, abs=1e-12)

    def test_known_value(self):
        assert extremal_coefficient(4.0) == pytest.approx(2.0 * ndtr(1.0), abs=1e-12)
        assert extremal_coefficient(4.0) == pytest.approx(1.68269, abs=1e-5)

    def test_monotone_in_kernel_weights(self, toy_net, toy_sts, toy_geom):
        base = dict(lambda_riv=0.5, lambda_euc=1e-4, tau=800.0, alpha=1.6, beta=1.1, c=0.8)
        gam0 = kernel_matrix(KernelParams(variant=KernelVariant.FULL, **base), toy_geom)
        for key in ("lambda_riv", "lambda_euc"):
            bumped = dict(base)
            bumped[key] *= 2.0
            gam1 = kernel_matrix(KernelParams(variant=KernelVariant.FULL, **bumped), toy_geom)
            assert np.all(extremal_coefficient(gam1) >= extremal_coefficient(gam0) - 1e-15)


class TestBivariateCdf:
    def test_independence_limit(self):
        assert bivariate_cdf(np.inf, 2.0, 3.0) == pytest.approx(math.exp(-1 / 2 - 1 / 3))

    def test_complete_dependence(self):
        assert bivariate_cdf(0.0, 2.0, 3.0) == pytest.approx(math.exp(-1 / 2))

    def test_known_value(self):
        assert bivariate_cdf(4.0, 1.0, 1.0) == pytest.approx(math.exp(-2 * ndtr(1.0)))
        assert bivariate_cdf(4.0, 1.0, 1.0) == pytest.approx(0.1859, abs=2e-4)

    def test_diagonal_matches_extremal_coefficient(self):
        for g in (0.03, 0.5, 1.0, 4.0, 12.0):
            theta = float(extremal_coefficient(g))
            for u in (0.5, 1.0, 2.0, 10.0):
                assert bivariate_cdf(g, u, u) == pytest.approx(
                    math.exp(-theta / u), abs=1e-12
                )

    def test_domain(self):
        with pytest.raises(DomainError):
            bivariate_cdf(1.0, -1.0, 1.0)
        with pytest.raises(DomainError):
            bivariate_cdf(-0.5, 1.0, 1.0)


class TestParamsAndSerialization:
    def test_box_validation(self):
        with pytest.raises(DomainError):
            KernelParams(alpha=2.3)
        with pytest.raises(DomainError):
            KernelParams(beta=0.2)
        with pytest.raises(DomainError):
            KernelParams(tau=0.0)
        with pytest.raises(DomainError):
            KernelParams(lambda_riv=-0.1)

    def test_normalized_neutral_values(self):
        p = KernelParams(variant=KernelVariant.HYDRO, lambda_riv=2.0, tau=55.0,
                         lambda_euc=0.3, alpha=1.0, beta=1.2, c=0.5).normalized()
        assert p.lambda_riv == 0.0 and p.tau == 1.0
        q = KernelParams(variant=KernelVariant.FULL_ISO, lambda_riv=1.0,
                         lambda_euc=0.3, tau=100.0, alpha=1.0, beta=1.2, c=0.5).normalized()
        assert q.beta == math.pi / 2 and q.c == 1.0

    def test_model_file_round_trip(self, tmp_path, theta0):
        path = tmp_path / "model.json"
        save_kernel_params(theta0, path, extra={"loglik": -12.5})
        loaded, extra = load_kernel_params(path)
        assert loaded == theta0
        assert extra["loglik"] == -12.5

    def test_model_file_field_names(self, tmp_path, theta0):
        import json

        path = tmp_path / "model.json"
        save_kernel_params(theta0, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {
            "variant", "lambda_riv", "lambda_euc", "tau_km", "alpha", "beta_rad", "c",
        }

    def test_station_file_round_trip(self, tmp_path, toy_sts):
        path = tmp_path / "stations.csv"
        save_stations(toy_sts, path)
        loaded = load_stations(path)
        assert loaded.ids == toy_sts.ids
        np.testing.assert_allclose(
            loaded.summaries[3].hydro_position, toy_sts.summaries[3].hydro_position
        )

    def test_station_set_validation(self, toy_sts):
        with pytest.raises(InputError):
            StationSet(ids=("a", "a"), summaries=toy_sts.summaries[:2])
