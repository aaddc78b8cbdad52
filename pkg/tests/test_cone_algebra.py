import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hesslab.cone_algebra import (HermitianForm, ValidationError, definition_positivity_test, dual_cone_sample,
                          eigenvalues_hermitian, elementary_symmetric, format_form, gamma_membership,
                          jacobi_hermitian, mixed_form_coefficient, parse_form, random_gamma_form,
                          random_hermitian)


def brute_sigma(k, lam):
    return sum(math.prod(c) for c in itertools.combinations(lam, k))


@st.composite
def hermitian(draw, n=None):
    n = draw(st.integers(1, 4)) if n is None else n
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_hermitian(n, np.random.default_rng(seed))


class TestHermitianForm:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValidationError):
            HermitianForm(np.array([[1, 2], [0, 1]]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            HermitianForm(np.array([[np.nan]]))

    def test_rejects_large_dimension(self):
        with pytest.raises(ValidationError):
            HermitianForm(np.eye(5))

    def test_text_round_trip(self, rng):
        a = random_hermitian(3, rng)
        back = parse_form(format_form(a))
        assert np.array_equal(back.entries, HermitianForm(a).entries)


class TestEigenvalues:
    def test_diagonal(self):
        assert np.allclose(eigenvalues_hermitian(HermitianForm.diag(3, 1, 2)).eigenvalues, [1, 2, 3])

    def test_two_by_two(self):
        lam = eigenvalues_hermitian(np.array([[2, 1j], [-1j, 2]])).eigenvalues
        assert np.allclose(lam, [1, 3], atol=1e-14)

    def test_identity(self):
        assert np.allclose(eigenvalues_hermitian(np.eye(4)).eigenvalues, 1.0)

    @given(hermitian())
    def test_reconstruction_and_trace(self, a):
        lam, u = jacobi_hermitian(a)
        scale = max(np.linalg.norm(a), 1e-300)
        assert np.linalg.norm(a - u @ np.diag(lam) @ u.conj().T) <= 1e-12 * scale + 1e-15
        spec = eigenvalues_hermitian(a)
        assert np.all(np.diff(spec.eigenvalues) >= 0)
        assert abs(spec.eigenvalues.sum() - np.trace(a).real) <= 1e-12 * (1 + scale)

    @given(hermitian())
    def test_matches_lapack(self, a):
        assert np.allclose(eigenvalues_hermitian(a).eigenvalues, np.linalg.eigvalsh(a), atol=1e-12)


class TestElementarySymmetric:
    def test_examples(self):
        assert elementary_symmetric(2, [1, 1, 1]) == 3
        lam = [1, 1, -0.5]
        assert [elementary_symmetric(k, lam) for k in (1, 2, 3)] == pytest.approx([1.5, 0.0, -0.5], abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            elementary_symmetric(4, [1, 2, 3])

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.data())
    def test_against_brute_force(self, lam, data):
        k = data.draw(st.integers(1, len(lam)))
        assert elementary_symmetric(k, lam) == pytest.approx(brute_sigma(k, lam), abs=1e-12)


class TestGammaMembership:
    def test_identity(self):
        for m in range(1, 4):
            rep = gamma_membership(np.eye(3), m)
            assert rep.member and rep.margin == pytest.approx(min(math.comb(3, k) for k in range(1, m + 1)))

    def test_phi2_hessian(self):
        a = np.diag([1, 1, -0.5])
        rep2 = gamma_membership(a, 2)
        assert rep2.member and rep2.sigma_values == pytest.approx((1.5, 0.0), abs=1e-14)
        rep3 = gamma_membership(a, 3)
        assert not rep3.member and rep3.margin == pytest.approx(-0.5, abs=1e-14)

    def test_hartogs_hessian(self):
        a = np.diag([1, -1])
        assert gamma_membership(a, 1).member
        rep = gamma_membership(a, 2)
        assert not rep.member and rep.margin == pytest.approx(-1)

    def test_closure_flag(self):
        rep = gamma_membership(np.diag([1, 1, -0.5]), 2)
        assert rep.member and not rep.closure or rep.margin < 0

    @given(hermitian(), st.data())
    def test_nesting(self, a, data):
        n = a.shape[0]
        m = data.draw(st.integers(1, n))
        if gamma_membership(a, m).member:
            assert all(gamma_membership(a, k).member for k in range(1, m))

    @given(hermitian())
    def test_psd_in_every_cone(self, a):
        p = a @ a.conj().T
        assert all(gamma_membership(p, m).member for m in range(1, a.shape[0] + 1))


class TestMixedForm:
    def test_identity_normalization(self):
        for n in range(1, 5):
            assert mixed_form_coefficient([np.eye(n)] * n) == pytest.approx(1.0)

    def test_two_diagonals(self):
        a1, a2, b1, b2 = 1.5, -0.25, 0.7, 2.0
        val = mixed_form_coefficient([np.diag([a1, a2]), np.diag([b1, b2])])
        assert val == pytest.approx((a1 * b2 + a2 * b1) / 2)

    def test_scaled_identity(self):
        c = 1.7
        assert mixed_form_coefficient([c * np.eye(4)] * 2 + [np.eye(4)] * 2) == pytest.approx(c ** 2)

    def test_wrong_count(self):
        with pytest.raises(ValidationError):
            mixed_form_coefficient([np.eye(3)] * 2)

    @given(hermitian(), st.data())
    def test_powers_give_normalized_sigma(self, a, data):
        n = a.shape[0]
        m = data.draw(st.integers(1, n))
        lam = np.linalg.eigvalsh(a)
        val = mixed_form_coefficient([a] * m + [np.eye(n)] * (n - m))
        assert val == pytest.approx(brute_sigma(m, lam) / math.comb(n, m), abs=1e-10)

    @given(st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
    def test_symmetry_and_multilinearity(self, n, seed):
        rng = np.random.default_rng(seed)
        forms = [random_hermitian(n, rng) for _ in range(n)]
        base = mixed_form_coefficient(forms)
        for perm in itertools.islice(itertools.permutations(range(n)), 6):
            assert mixed_form_coefficient([forms[i] for i in perm]) == pytest.approx(base, abs=1e-12)
        extra = random_hermitian(n, rng)
        s, t = rng.uniform(-2, 2, 2)
        lhs = mixed_form_coefficient([s * forms[0] + t * extra] + forms[1:])
        rhs = s * base + t * mixed_form_coefficient([extra] + forms[1:])
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestDefinitionPositivity:
    def test_identity_nonnegative(self, rng):
        alphas = [random_gamma_form(3, 2, rng)]
        assert definition_positivity_test(np.eye(3), alphas, 2) >= 0

    def test_examples(self):
        assert definition_positivity_test(np.diag([1, -1]), [np.eye(2)], 2) == pytest.approx(0.0)
        assert definition_positivity_test(np.diag([1, -1]), [np.diag([2, 0.5])], 2) == pytest.approx(-0.75)

    def test_rejects_alpha_outside_cone(self):
        with pytest.raises(ValidationError):
            definition_positivity_test(np.eye(2), [np.diag([1, -2])], 2)

    def test_wrong_alpha_count(self):
        with pytest.raises(ValidationError):
            definition_positivity_test(np.eye(3), [], 2)

    @given(st.integers(2, 4), st.integers(0, 2 ** 32 - 1), st.data())
    def test_garding_consistency(self, n, seed, data):
        rng = np.random.default_rng(seed)
        m = data.draw(st.integers(2, n))
        hu = random_gamma_form(n, m, rng)
        alphas = [random_gamma_form(n, m, rng) for _ in range(m - 1)]
        assert definition_positivity_test(hu, alphas, m) >= -1e-9


class TestDualConeSample:
    def test_m1_only_identity(self):
        out = dual_cone_sample(1, 10, 0, 3)
        assert len(out) == 1 and np.allclose(out[0].entries, np.eye(3) / 3)

    def test_psd_unit_trace(self):
        for a in dual_cone_sample(3, 20, 5, 3):
            assert np.linalg.eigvalsh(a.entries).min() >= -1e-10
            assert np.trace(a.entries).real == pytest.approx(1.0)

    def test_deterministic(self):
        a = dual_cone_sample(2, 8, 7, 3)
        b = dual_cone_sample(2, 8, 7, 3)
        assert all(np.array_equal(x.entries, y.entries) for x, y in zip(a, b))

    def test_prefix_stable(self):
        short = dual_cone_sample(2, 4, 3, 2)
        long = dual_cone_sample(2, 9, 3, 2)
        assert all(np.array_equal(x.entries, y.entries) for x, y in zip(short, long))

    def test_bad_count(self):
        with pytest.raises(ValidationError):
            dual_cone_sample(2, 0, 0, 2)
