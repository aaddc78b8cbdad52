import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesslab.cone_algebra import ValidationError, dual_cone_sample
from hesslab.envelopes import (EnvelopeProblem, SolverConfig, ball_mask, bm_regularity_test, build_exhaustion,
                               decompose, default_samples, hyperconvexity_test, lattice_directions, realify,
                               solve_envelope, walsh_boundary_check)
from hesslab.fields import msh_report
from hesslab.grid import (ClosedForm, constant, eval_closed_form, field_from_function, hermitian_quadratic,
                          make_domain, sq_norm)


@pytest.fixture(scope="module")
def disc():
    return make_domain("disc", h=0.05)


@pytest.fixture(scope="module")
def coarse_disc():
    return make_domain("disc", h=0.125)


@pytest.fixture(scope="module")
def ball_reduced():
    return make_domain("ball", {"n": 2}, h=0.05, kind="reinhardt", reach=2)


def _bumpy(d, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(1, 4, size=3)
    return field_from_function(lambda z: 0.3 * np.cos(a * z[:, 0].real) * np.cos(b * z[:, 0].imag) - c * 0.05, d)


def _obstacle(d, f, m=1, samples=None, cfg=SolverConfig()):
    return solve_envelope(EnvelopeProblem(d, m, "obstacle", f=f, dual_samples=samples), cfg)


def _harmonic_obstacle_oracle(f):
    """Five-point projected Jacobi: u = min(f, mean of axis neighbours)."""
    d = f.domain
    u = np.where(d.masked, f.values, np.nan)
    inner = d.interior
    fv = f.values
    for _ in range(200_000):
        avg = 0.25 * (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1))
        new = np.where(inner, np.minimum(fv, avg), u)
        if np.nanmax(np.abs(new - u)) < 1e-12:
            return new
        u = new
    raise AssertionError("oracle did not converge")


class TestSolverConfig:
    @pytest.mark.parametrize("kw", [{"tol": 0.0}, {"max_iters": 0}, {"damping": 0.0}, {"damping": 1.5},
                                    {"method": "newton"}, {"order": "random"}])
    def test_rejects(self, kw):
        with pytest.raises(ValidationError):
            SolverConfig(**kw)


class TestEnvelopeProblem:
    def test_extremal_needs_margin(self, disc):
        E = disc.interior & (disc.distance_to_exterior() < 0.06)
        with pytest.raises(ValidationError, match="2h"):
            EnvelopeProblem(disc, 1, "extremal", E=E)

    def test_samples_must_be_unit_trace(self, disc):
        f = eval_closed_form(constant(0.0), disc)
        with pytest.raises(ValidationError):
            EnvelopeProblem(disc, 1, "obstacle", f=f, dual_samples=[np.eye(1) * 2])

    def test_default_sample_counts(self):
        assert len(default_samples(2, 1)) == 1
        assert len(default_samples(2, 2)) >= 64


class TestStencils:
    @settings(max_examples=25)
    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_decomposition_reproduces_form(self, seed):
        A = dual_cone_sample(2, 1, seed, 2, extremes=False)[0].entries
        M = realify(A)
        dirs = lattice_directions(4, 1)
        c = decompose(M, dirs)
        if c is None:
            return
        assert np.all(c >= 0)
        rebuilt = np.einsum("k,ki,kj->ij", c, dirs, dirs)
        assert np.abs(rebuilt - M).max() <= 1e-9

    def test_realify_identity(self):
        # tr H_c(u) is a quarter of the real Laplacian
        assert np.allclose(realify(np.eye(2)), np.eye(4) / 4)

    def test_realify_trace_identity(self, rng):
        A = dual_cone_sample(2, 1, 9, 2, extremes=False)[0].entries
        S = rng.normal(size=(4, 4))
        S = S + S.T
        # complex Hessian of the real quadratic x.S.x / 2, coordinates (x1, y1, x2, y2)
        xx, yy, xy, yx = S[0::2, 0::2], S[1::2, 1::2], S[0::2, 1::2], S[1::2, 0::2]
        hc = 0.25 * (xx + yy) + 0.25j * (xy - yx)
        assert np.trace(realify(A) @ S) == pytest.approx(np.trace(A @ hc).real, abs=1e-12)


class TestSolveEnvelope:
    @pytest.mark.parametrize("method", ["howard", "gauss_seidel"])
    def test_constant_obstacle(self, disc, method):
        f = eval_closed_form(constant(0.7), disc)
        r = _obstacle(disc, f, cfg=SolverConfig(method=method))
        assert r.converged
        assert np.nanmax(np.abs(r.u.values - 0.7)) <= 1e-10

    def test_msh_obstacle_is_fixed(self, disc):
        f = eval_closed_form(hermitian_quadratic(np.eye(1), -1.0), disc)
        r = _obstacle(disc, f)
        assert np.nanmax(np.abs(r.u.values - f.values)) <= 1e-10

    def test_msh_obstacle_is_fixed_m2(self, ball_reduced):
        f = eval_closed_form(hermitian_quadratic(np.diag([1.0, 0.5]), -1.0), ball_reduced)
        r = _obstacle(ball_reduced, f, m=2)
        assert np.nanmax(np.abs(r.u.values - f.values)) <= 1e-10

    def test_extremal_disc_value(self):
        d = make_domain("disc", h=0.02)
        E = ball_mask(d, [0.0], 0.25 + 1e-9)
        r = solve_envelope(EnvelopeProblem(d, 1, "extremal", E=E))
        assert r.converged
        assert abs(r.u.at([0.5]) - math.log(0.5) / math.log(4)) <= 0.02

    def test_harmonic_oracle(self, disc):
        f = _bumpy(disc, 3)
        u = _obstacle(disc, f).u.values
        ref = _harmonic_obstacle_oracle(f)
        assert np.nanmax(np.abs(u - ref)[disc.masked]) <= 2 * disc.h

    def test_below_obstacle_and_certified(self, disc):
        f = _bumpy(disc, 5)
        r = _obstacle(disc, f)
        assert np.all(r.u.values[disc.masked] <= f.values[disc.masked] + 1e-12)
        assert r.msh_certificate["passed"]

    def test_gauss_seidel_matches_howard(self, coarse_disc):
        f = _bumpy(coarse_disc, 7)
        a = _obstacle(coarse_disc, f, cfg=SolverConfig(method="howard", tol=1e-11)).u.values
        b = _obstacle(coarse_disc, f, cfg=SolverConfig(method="gauss_seidel", tol=1e-11)).u.values
        assert np.nanmax(np.abs(a - b)) <= 1e-8

    def test_sweep_residual_nonincreasing(self, coarse_disc):
        f = _bumpy(coarse_disc, 11)
        r = _obstacle(coarse_disc, f, cfg=SolverConfig(method="gauss_seidel", tol=1e-11))
        hist = np.array(r.residual_history)
        assert np.all(np.diff(hist) <= 1e-14)

    def test_nonconvergence_flagged(self, disc):
        f = _bumpy(disc, 13)
        r = _obstacle(disc, f, cfg=SolverConfig(method="gauss_seidel", max_sweeps=2, tol=1e-14))
        assert not r.converged
        assert r.final_residual > 1e-14
        assert '"verdict": "INCONCLUSIVE"' in r.certificate_text()

    def test_sample_refinement_lowers(self, ball_reduced):
        f = field_from_function(lambda z: np.abs(z[:, 0]) ** 2 * 0.5 - np.abs(z[:, 1]) ** 2 - 0.1, ball_reduced)
        big = dual_cone_sample(2, 32, 4, 2)
        small = big[:6]
        lo = _obstacle(ball_reduced, f, m=2, samples=big).u.values
        hi = _obstacle(ball_reduced, f, m=2, samples=small).u.values
        assert np.nanmax(lo - hi) <= 1e-9


class TestLattice:
    @settings(max_examples=8)
    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_monotone_and_idempotent(self, seed):
        d = _small_disc()
        f = _bumpy(d, seed)
        g = f + field_from_function(lambda z: np.abs(np.sin(3 * z[:, 0].real)), d)
        uf = _obstacle(d, f).u
        ug = _obstacle(d, g).u
        assert np.nanmax(uf.values - ug.values) <= 1e-9
        again = _obstacle(d, uf).u
        assert np.nanmax(np.abs(again.values - uf.values)) <= 1e-9

    def test_m_monotone(self):
        d = make_domain("ball", {"n": 2}, h=0.1, kind="reinhardt", reach=2)
        f = field_from_function(lambda z: np.cos(3 * np.abs(z[:, 0])) * 0.2 - np.abs(z[:, 1]) ** 2, d)
        u1 = _obstacle(d, f, m=1).u.values
        u2 = _obstacle(d, f, m=2).u.values
        assert np.nanmax(u2 - u1) <= 1e-9


_SMALL = {}


def _small_disc():
    if "d" not in _SMALL:
        _SMALL["d"] = make_domain("disc", h=0.1)
    return _SMALL["d"]


class TestWalsh:
    def test_constant_gap_zero(self, disc):
        f = eval_closed_form(constant(-0.3), disc)
        r = solve_envelope(EnvelopeProblem(disc, 1, "boundary", f=f))
        rep = walsh_boundary_check(r, f, 1e-9)
        assert rep["passed"] and rep["max_gap"] <= 1e-9

    def test_pluriharmonic_data(self):
        d = make_domain("ball", {"n": 2}, h=0.2)
        f = eval_closed_form(ClosedForm("re_linear", {"a": np.array([1.0, 0.0])}), d)
        r = solve_envelope(EnvelopeProblem(d, 2, "boundary", f=f))
        assert walsh_boundary_check(r, f, 2 * d.h)["passed"]
        assert np.nanmax(np.abs(r.u.values - f.values)) <= 2 * d.h

    def test_nonconverged_is_inconclusive(self, disc):
        f = _bumpy(disc, 2)
        r = solve_envelope(EnvelopeProblem(disc, 1, "obstacle", f=f),
                           SolverConfig(method="gauss_seidel", max_sweeps=1, tol=1e-14))
        assert walsh_boundary_check(r, f, 1.0)["verdict"] == "INCONCLUSIVE"


class TestTesters:
    def test_ball_hyperconvex_m1(self):
        d = make_domain("ball", {"n": 2}, h=0.04, kind="reinhardt", reach=2)
        assert hyperconvexity_test(d, 1).verdict == "PASS"

    def test_ball_hyperconvex_m2(self):
        d = make_domain("ball", {"n": 2}, h=0.04, kind="reinhardt", reach=2)
        assert hyperconvexity_test(d, 2).verdict == "PASS"

    @pytest.mark.slow
    def test_reinhardt_omega2_m2(self):
        d = make_domain("reinhardt", {"k": 2, "n": 3}, h=0.1, kind="reinhardt", reach=2)
        assert hyperconvexity_test(d, 2).verdict == "PASS"

    def test_inconclusive_on_nonconvergence(self):
        d = make_domain("disc", h=0.1)
        v = hyperconvexity_test(d, 1, cfg=SolverConfig(method="gauss_seidel", max_sweeps=1))
        assert v.verdict == "INCONCLUSIVE"

    @pytest.mark.parametrize("z0", [[1.0], [-1.0], [1j]])
    def test_bm_disc(self, disc, z0):
        v = bm_regularity_test(disc, 1, z0)
        assert v.verdict == "PASS"
        assert v.details["delta"] > 0

    @pytest.mark.parametrize("m", [1, 2])
    def test_bm_ball(self, m):
        d = make_domain("ball", {"n": 2}, h=0.2)
        v = bm_regularity_test(d, m, [1.0, 0.0])
        assert v.verdict == "PASS"

    def test_bm_rejects_interior_point(self, disc):
        with pytest.raises(ValidationError):
            bm_regularity_test(disc, 1, [0.0])


class TestExhaustionRecipes:
    def test_strict_sum_ball(self):
        d = make_domain("ball", {"n": 2}, h=0.04, kind="reinhardt", reach=2)
        ex = build_exhaustion(d, 2, "strict_sum")
        c = ex.certificate
        assert c["passed"] and c["negative"] and c["exhaustion"]
        assert c["strict_c"] == pytest.approx(ex.weights[c["j_omega"] - 1] / c["j_omega"])
        assert c["strict"]["worst_margin"] >= -1e-9

    def test_weights_geometric(self):
        d = make_domain("disc", h=0.05)
        base = eval_closed_form(sq_norm(), d) - 1.0
        ex = build_exhaustion(d, 1, "strict_sum", base=base, tol=1e-4)
        w = np.array(ex.weights)
        j = np.arange(1, len(w) + 1)
        assert np.all(w <= 2.0 ** -j + 1e-15)
        assert 2.0 ** -len(w) <= 1e-4

    def test_uniform_disc(self):
        ex = build_exhaustion(make_domain("disc", h=0.05), 1, "uniform")
        assert ex.certificate["passed"]

    def test_unknown_recipe(self, disc):
        with pytest.raises(ValidationError):
            build_exhaustion(disc, 1, "bogus", base=eval_closed_form(sq_norm(), disc) - 1.0)

    def test_tail_not_summable(self, disc):
        with pytest.raises(ValidationError, match="max_terms"):
            build_exhaustion(disc, 1, "strict_sum", base=eval_closed_form(sq_norm(), disc) - 1.0,
                             tol=1e-30, max_terms=20)

    def test_prerequisite_failure(self):
        d = make_domain("hartogs_triangle", h=0.04, kind="reinhardt", reach=2)
        with pytest.raises(ValidationError, match="prerequisite"):
            build_exhaustion(d, 2, "strict_sum")


class TestCertificateOutput:
    def test_msh_report_of_envelope(self, disc):
        r = _obstacle(disc, _bumpy(disc, 17))
        rep = msh_report(r.u, 1, tol=10 * 1e-10 / disc.h ** 2 * 4)
        assert rep.passed
