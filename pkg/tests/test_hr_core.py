import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import ndtr

from conftest import fd_mixed
from riverextremes.errors import DomainError, InputError, ThresholdError
from riverextremes.hr_core import (
    CensoredTerm,
    below_threshold_mass,
    censored_density,
    censored_log_density_batch,
    exponent_measure,
    spectral_density,
)
from riverextremes.kernels import HrStructure, bivariate_cdf, extremal_coefficient


def random_structure(m, seed, scale=2.0):
    """Random valid kernel matrix via a Gaussian-variogram construction."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(m, 2)) * scale
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    gam = d ** rng.uniform(0.7, 1.8)
    return HrStructure(gam)


class TestExponentMeasure:
    def test_univariate(self):
        hr = HrStructure(np.zeros((1, 1)))
        assert exponent_measure(hr, [4.0]) == pytest.approx(0.25)

    def test_bivariate_matches_closed_form(self):
        for g in (0.1, 1.0, 4.0, 25.0):
            hr = HrStructure(np.array([[0.0, g], [g, 0.0]]))
            for x in (0.5, 1.0, 5.0):
                for y in (0.5, 1.0, 5.0):
                    assert exponent_measure(hr, [x, y]) == pytest.approx(
                        -math.log(bivariate_cdf(g, x, y)), abs=1e-10
                    )

    def test_marginal_constraint(self):
        hr = random_structure(4, 3)
        for z in (0.5, 2.0, 17.0):
            v = exponent_measure(hr, [z, np.inf, np.inf, np.inf])
            assert v == pytest.approx(1.0 / z, abs=1e-9)

    def test_homogeneity(self):
        hr = random_structure(5, 4)
        rng = np.random.default_rng(0)
        x = rng.uniform(0.5, 4.0, size=5)
        v = exponent_measure(hr, x, seed=7)
        for lam in (0.5, 2.0, 10.0):
            vl = exponent_measure(hr, lam * x, seed=7)
            assert vl == pytest.approx(v / lam, rel=1e-9)

    def test_monotonicity(self):
        hr = random_structure(3, 8)
        x = np.array([1.0, 2.0, 1.5])
        v = exponent_measure(hr, x)
        for j in range(3):
            xp = x.copy()
            xp[j] *= 1.5
            assert exponent_measure(hr, xp) < v

    def test_anchor_permutation_invariance(self):
        for m in (2, 3, 5, 10):
            hr = random_structure(m, m)
            rng = np.random.default_rng(m)
            x = rng.uniform(0.5, 5.0, size=m)
            v = exponent_measure(hr, x, seed=1)
            for trial in range(3):
                perm = rng.permutation(m)
                vp = exponent_measure(hr.subset(perm), x[perm], seed=1)
                assert vp == pytest.approx(v, abs=1e-8 * max(v, 1.0))

    def test_monte_carlo_oracle_m3(self):
        # independent check of the closed form against the defining
        # expectation E[max_j exp(W_j - var_j/2) / x_j]
        g = np.array([[0.0, 1.3, 2.1], [1.3, 0.0, 0.8], [2.1, 0.8, 0.0]])
        hr = HrStructure(g)
        x = np.array([1.0, 2.0, 0.7])
        rng = np.random.default_rng(42)
        cov = np.array(
            [
                [g[1, 0], (g[1, 0] + g[2, 0] - g[1, 2]) / 2],
                [(g[1, 0] + g[2, 0] - g[1, 2]) / 2, g[2, 0]],
            ]
        )
        chol = np.linalg.cholesky(cov)
        n = 10**6
        w = np.zeros((n, 3))
        w[:, 1:] = rng.standard_normal((n, 2)) @ chol.T
        var = np.array([0.0, g[1, 0], g[2, 0]])
        samples = (np.exp(w - var / 2.0) / x).max(axis=1)
        mc, se = samples.mean(), samples.std(ddof=1) / math.sqrt(n)
        assert exponent_measure(hr, x, accuracy=1e-7, budget=4_000_000) == pytest.approx(
            mc, abs=3 * se
        )

    def test_input_validation(self):
        hr = random_structure(3, 1)
        with pytest.raises(DomainError):
            exponent_measure(hr, [1.0, -2.0, 1.0])
        with pytest.raises(InputError):
            exponent_measure(hr, [1.0, 1.0])


class TestSpectralDensity:
    def test_bivariate_hand_value(self):
        hr = HrStructure(np.array([[0.0, 1.0], [1.0, 0.0]]))
        expect = 8.0 / math.sqrt(2 * math.pi) * math.exp(-1.0 / 8.0)
        assert spectral_density(hr, [0.5, 0.5]) == pytest.approx(expect, rel=1e-12)

    def test_moment_constraints_m2(self):
        for g in (0.5, 2.0, 6.0):
            hr = HrStructure(np.array([[0.0, g], [g, 0.0]]))
            for j in range(2):
                def moment(w0, j=j):
                    w = np.array([w0, 1.0 - w0])
                    return w[j] * spectral_density(hr, w)

                val, err = integrate.quad(moment, 1e-12, 1 - 1e-12, limit=300)
                assert val == pytest.approx(1.0, abs=max(1e-6, 3 * err))

    def test_moment_constraints_m3(self):
        # tensor Gauss-Legendre in log-ratio coordinates; the Jacobian of
        # omega = softmax(0, a, b) is omega_1 * omega_2 * omega_3
        hr = random_structure(3, 12)
        sig = hr.sigma(0)
        mu = -hr.gamma[1:, 0] / 2.0
        half = np.abs(mu) + 10.0 * np.sqrt(np.diag(sig))
        nodes, weights = np.polynomial.legendre.leggauss(140)
        a = mu[0] + half[0] * nodes
        wa = half[0] * weights
        b = mu[1] + half[1] * nodes
        wb = half[1] * weights
        totals = np.zeros(3)
        for i, ai in enumerate(a):
            for k, bk in enumerate(b):
                w = np.exp([0.0, ai, bk])
                w /= w.sum()
                dens = spectral_density(hr, w) * w[0] * w[1] * w[2]
                totals += w * dens * wa[i] * wb[k]
        np.testing.assert_allclose(totals, np.ones(3), atol=5e-6)

    def test_anchor_permutation_invariance(self):
        hr = random_structure(4, 5)
        rng = np.random.default_rng(2)
        w = rng.uniform(0.1, 1.0, size=4)
        w /= w.sum()
        base = spectral_density(hr, w)
        for _ in range(4):
            perm = rng.permutation(4)
            assert spectral_density(hr.subset(perm), w[perm]) == pytest.approx(
                base, rel=1e-10
            )

    def test_boundary_rejected(self):
        hr = random_structure(3, 6)
        with pytest.raises(DomainError):
            spectral_density(hr, [0.0, 0.5, 0.5])
        with pytest.raises(DomainError):
            spectral_density(hr, [0.3, 0.3, 0.3])


class TestCensoredDensity:
    def test_bivariate_one_exceedance_closed_form(self):
        # -dV/dx1 at (x1, u) reduces to a single normal CDF factor
        g, x1, u = 4.0, 12.0, 10.0
        hr = HrStructure(np.array([[0.0, g], [g, 0.0]]))
        term = CensoredTerm.from_event([x1, 3.0], u)
        assert term.n_exceed == 1
        expect = x1**-2 * ndtr((math.log(u / x1) + g / 2) / math.sqrt(g))
        assert censored_density(hr, term) == pytest.approx(expect, rel=1e-10)

    def test_bivariate_one_exceedance_is_dV(self):
        g, u = 2.5, 10.0
        hr = HrStructure(np.array([[0.0, g], [g, 0.0]]))
        for x1 in (10.5, 15.0, 40.0):
            term = CensoredTerm.from_event([x1, 2.0], u)
            f = censored_density(hr, term)

            def neg_v(x):
                return -exponent_measure(hr, [x[0], u])

            got = fd_mixed(neg_v, np.array([x1, u]), [0], h_rel=1e-4)
            assert f == pytest.approx(got, rel=1e-6)

    def test_bivariate_full_density(self):
        g, u = 4.0, 10.0
        hr = HrStructure(np.array([[0.0, g], [g, 0.0]]))
        x = np.array([12.0, 15.0])
        term = CensoredTerm.from_event(x, u)
        assert term.n_exceed == 2
        xt = math.log(x[1] / x[0]) + g / 2
        expect = (
            1.0 / (x[0] ** 2 * x[1])
            * math.exp(-0.5 * xt**2 / g) / math.sqrt(2 * math.pi * g)
        )
        assert censored_density(hr, term) == pytest.approx(expect, rel=1e-12)

        def neg_v(y):
            return -exponent_measure(hr, y)

        fd = fd_mixed(neg_v, x, [0, 1], h_rel=1e-4)
        assert censored_density(hr, term) == pytest.approx(fd, rel=1e-6)

    def test_trivariate_mixed_partials(self):
        hr = random_structure(3, 21)
        u = 10.0
        rng = np.random.default_rng(3)
        x = np.array([14.0, 18.0, u])
        term = CensoredTerm.from_event(x, u)
        assert list(term.exceed_idx) == [0, 1]
        f = censored_density(hr, term, accuracy=1e-8)

        def neg_v(y):
            return -exponent_measure(hr, y, accuracy=1e-8)

        fd = fd_mixed(neg_v, x, [0, 1], h_rel=5e-3)
        assert f == pytest.approx(fd, rel=1e-4)

    def test_full_density_equals_spectral_times_radial(self):
        hr = random_structure(3, 30)
        x = np.array([14.0, 25.0, 19.0])
        term = CensoredTerm.from_event(x, 10.0)
        assert term.n_exceed == 3
        r = x.sum()
        expect = spectral_density(hr, x / r) * r ** (-4)
        assert censored_density(hr, term) == pytest.approx(expect, rel=1e-10)

    def test_no_exceedance_rejected(self):
        hr = random_structure(2, 2)
        term = CensoredTerm.from_event([3.0, 2.0], 10.0)
        with pytest.raises(DomainError):
            censored_density(hr, term)

    def test_pivot_choice_invariance(self):
        # relabelling the exceeding coordinates must not change the value
        hr = random_structure(4, 40)
        x = np.array([15.0, 22.0, 3.0, 11.0])
        term = CensoredTerm.from_event(x, 10.0)
        f = censored_density(hr, term, seed=5)
        perm = np.array([1, 0, 3, 2])
        term_p = CensoredTerm.from_event(x[perm], 10.0)
        fp = censored_density(hr.subset(perm), term_p, seed=5)
        assert fp == pytest.approx(f, rel=1e-7)


class TestBatchDensities:
    def test_matches_single_evaluations(self):
        hr = random_structure(5, 50)
        rng = np.random.default_rng(9)
        events = rng.uniform(0.5, 30.0, size=(40, 5))
        u = 10.0
        logf, extreme = censored_log_density_batch(hr, events, u, accuracy=1e-6,
                                                   budget=500_000, seed=3)
        assert extreme.sum() > 0
        for i in np.nonzero(extreme)[0][:10]:
            single = censored_density(
                hr, CensoredTerm.from_event(events[i], u), accuracy=1e-7, seed=3
            )
            assert logf[i] == pytest.approx(math.log(single), abs=5e-4)

    def test_flags_extremes(self):
        hr = random_structure(2, 3)
        events = np.array([[1.0, 2.0], [11.0, 2.0], [3.0, 14.0]])
        logf, extreme = censored_log_density_batch(hr, events, 10.0)
        assert list(extreme) == [False, True, True]
        assert logf[0] == 0.0


class TestBelowThresholdMass:
    def test_univariate(self):
        hr = HrStructure(np.zeros((1, 1)))
        assert below_threshold_mass(hr, 10.0) == pytest.approx(0.9)

    def test_limit_to_one(self):
        hr = random_structure(3, 17)
        assert below_threshold_mass(hr, 1e9) == pytest.approx(1.0, abs=1e-8)

    def test_bivariate_known_value(self):
        hr = HrStructure(np.array([[0.0, 4.0], [4.0, 0.0]]))
        theta = float(extremal_coefficient(4.0))
        assert below_threshold_mass(hr, 10.0) == pytest.approx(1 - theta / 10.0, abs=1e-10)

    def test_threshold_too_low(self):
        hr = random_structure(3, 18)
        with pytest.raises(ThresholdError):
            below_threshold_mass(hr, 1.01)
