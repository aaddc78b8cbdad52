"""Constant-coefficient (1,1)-forms: spectra, Garding cones and mixed discriminants.

A (1,1)-form with constant coefficients is stored as its n x n Hermitian
coefficient matrix.  The Kahler form ``beta = dd^c |z|^2`` is the identity.
All wedge coefficients are normalized so that ``beta^n`` has coefficient 1,
which makes ``alpha^k ^ beta^(n-k)`` equal to ``sigma_k(lambda) / C(n, k)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

MAX_DIM = 4
HERMITIAN_TOL = 1e-12
JACOBI_TOL = 1e-13
DEFAULT_CONE_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when an input violates an operation's preconditions."""


@dataclass(frozen=True)
class HermitianForm:
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"form must be square, got shape {a.shape}")
        n = a.shape[0]
        if not 1 <= n <= MAX_DIM:
            raise ValidationError(f"dimension {n} outside 1..{MAX_DIM}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("form has non-finite entries")
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(a - a.conj().T).max() > HERMITIAN_TOL * scale:
            raise ValidationError("form is not Hermitian")
        a = 0.5 * (a + a.conj().T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> "HermitianForm":
        return cls(np.eye(n))

    @classmethod
    def diag(cls, *values) -> "HermitianForm":
        return cls(np.diag(np.asarray(values, dtype=float)))

    def __add__(self, other):
        return HermitianForm(self.entries + as_matrix(other))

    def __mul__(self, s):
        return HermitianForm(float(s) * self.entries)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    vectors: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class ConeReport:
    m: int
    sigma_values: tuple
    member: bool
    margin: float
    closure: bool = False


def as_form(h) -> HermitianForm:
    return h if isinstance(h, HermitianForm) else HermitianForm(np.asarray(h))


def as_matrix(h) -> np.ndarray:
    return h.entries if isinstance(h, HermitianForm) else np.asarray(h, dtype=complex)


@njit(cache=True)
def _jacobi_kernel(a, tol, max_sweeps):
    n = a.shape[0]
    u = np.eye(n, dtype=np.complex128)
    scale = max(np.sqrt(np.sum(np.abs(a) ** 2)), 1e-300)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += abs(a[p, q]) ** 2
        if np.sqrt(off) <= tol * scale:
            return a, u, True
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = a[p, q]
                mag = abs(b)
                if mag <= 1e-300:
                    continue
                ph = np.conj(b / mag)
                theta = (a[q, q].real - a[p, p].real) / (2.0 * mag)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # J = [[c, s], [-s ph, c ph]] on columns p, q: a <- J^* a J, u <- u J
                for k in range(n):
                    x, y = a[k, p], a[k, q]
                    a[k, p] = c * x - s * ph * y
                    a[k, q] = s * x + c * ph * y
                    x, y = u[k, p], u[k, q]
                    u[k, p] = c * x - s * ph * y
                    u[k, q] = s * x + c * ph * y
                for k in range(n):
                    x, y = a[p, k], a[q, k]
                    a[p, k] = c * x - s * np.conj(ph) * y
                    a[q, k] = s * x + c * np.conj(ph) * y
                a[p, q] = 0.0
                a[q, p] = 0.0
    return a, u, False


def jacobi_hermitian(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 60):
    """Cyclic Jacobi diagonalization of a small Hermitian matrix.

    Returns ``(eigenvalues, U)`` with ``a = U diag(eigenvalues) U^*``,
    eigenvalues unsorted.
    """
    a, u, ok = _jacobi_kernel(np.array(a, dtype=np.complex128), float(tol), int(max_sweeps))
    if not ok:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.real(np.diag(a)).copy(), u


def eigenvalues_hermitian(h) -> Spectrum:
    """Ascending real eigenvalues of a Hermitian form (cyclic Jacobi)."""
    form = as_form(h)
    lam, u = jacobi_hermitian(form.entries)
    order = np.argsort(lam)
    lam, u = lam[order], u[:, order]
    lam.setflags(write=False)
    return Spectrum(lam, u)


def _sym_table(lam: np.ndarray, kmax: int) -> np.ndarray:
    """sigma_0..sigma_kmax along the last axis (batched recurrence)."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape[:-1] + (kmax + 1,))
    out[..., 0] = 1.0
    for i in range(lam.shape[-1]):
        x = lam[..., i]
        for k in range(min(i + 1, kmax), 0, -1):
            out[..., k] = out[..., k] + x * out[..., k - 1]
    return out


def sigma_all(lam, m: int) -> np.ndarray:
    """Batched sigma_1..sigma_m of eigenvalue arrays shaped (..., n)."""
    return _sym_table(lam, m)[..., 1:]


def elementary_symmetric(k: int, lam) -> float:
    values = lam.eigenvalues if isinstance(lam, Spectrum) else np.asarray(lam, dtype=float)
    n = len(values)
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} outside 1..{n}")
    return float(_sym_table(values, k)[k])


def gamma_membership(h, m: int, tol: float = DEFAULT_CONE_TOL) -> ConeReport:
    form = as_form(h)
    if not 1 <= m <= form.n:
        raise ValidationError(f"m={m} outside 1..{form.n}")
    lam = eigenvalues_hermitian(form).eigenvalues
    sig = tuple(float(s) for s in _sym_table(lam, m)[1:])
    margin = min(sig)
    member = margin >= -tol
    return ConeReport(m, sig, member, margin, closure=member and margin < 0.0)


def mixed_form_coefficient(forms) -> float:
    """Mixed discriminant D(A_1, ..., A_n) with D(I, ..., I) = 1.

    Polarization:  n! D = sum over subsets S of (-1)^(n-|S|) det(sum_S A_i).
    """
    mats = [as_matrix(f) for f in forms]
    if not mats:
        raise ValidationError("need at least one form")
    n = mats[0].shape[0]
    if len(mats) != n or any(a.shape != (n, n) for a in mats):
        raise ValidationError(f"need exactly {n} forms of size {n}x{n}")
    for a in mats:
        as_form(a)
    subsets = np.array(list(itertools.product((0, 1), repeat=n))[1:], dtype=float)
    signs = (-1.0) ** (n - subsets.sum(axis=1))
    sums = np.einsum("si,ijk->sjk", subsets, np.array(mats))
    return float(signs @ np.linalg.det(sums).real) / math.factorial(n)


def definition_positivity_test(hu, alphas, m: int, tol: float = DEFAULT_CONE_TOL) -> float:
    """Coefficient of dd^c u ^ alpha_1 ^ ... ^ alpha_{m-1} ^ beta^(n-m)."""
    form = as_form(hu)
    n = form.n
    alphas = list(alphas)
    if not 1 <= m <= n:
        raise ValidationError(f"m={m} outside 1..{n}")
    if len(alphas) != m - 1:
        raise ValidationError(f"need {m - 1} test forms, got {len(alphas)}")
    for a in alphas:
        if not gamma_membership(a, m, tol).member:
            raise ValidationError("test form outside the Garding cone")
    ident = np.eye(n)
    return mixed_form_coefficient([form.entries, *map(as_matrix, alphas)] + [ident] * (n - m))


def _hermitian_batch(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k Hermitian forms with entries uniform in [-1, 1]."""
    a = rng.uniform(-1, 1, (k, n, n)) + 1j * rng.uniform(-1, 1, (k, n, n))
    a = np.triu(a, 1)
    a = a + np.conj(np.swapaxes(a, 1, 2))
    idx = np.arange(n)
    a[:, idx, idx] = rng.uniform(-1, 1, (k, n))
    return a


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    return _hermitian_batch(n, 1, rng)[0]


def random_gamma_form(n: int, m: int, rng: np.random.Generator, max_tries: int = 100000,
                      box_tries: int = 16) -> np.ndarray:
    """Rejection sample from Gamma_m among forms with entries in [-1, 1].

    The box proposal rarely hits Gamma_m when m is close to n, so after
    ``box_tries`` misses the proposal becomes ``B + s I`` with s uniform in
    [0, -2 lambda_min(B)]; the upper half of that range is PSD and always
    accepted.  Proposals are drawn and tested in batches.
    """
    tried = 0
    while tried < max_tries:
        k = min(box_tries if tried == 0 else 16, max_tries - tried)
        a = _hermitian_batch(n, k, rng)
        lam = np.linalg.eigvalsh(a)
        if tried > 0:
            s = np.maximum(-lam[:, 0], 0.0) * rng.uniform(0.0, 2.0, k)
            a = a + s[:, None, None] * np.eye(n)
            lam = lam + s[:, None]
        ok = np.flatnonzero(np.all(sigma_all(lam, m) >= 0.0, axis=1))
        if len(ok):
            return a[ok[0]]
        tried += k
    raise RuntimeError(f"no Gamma_{m} sample found in {max_tries} draws")


def linear_functional_matrix(func, n: int) -> np.ndarray:
    """Hermitian A with func(V) = tr(A V) for Hermitian V, func real-linear."""
    a = np.zeros((n, n), dtype=complex)
    for j in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[j, j] = 1.0
        a[j, j] = func(e)
    for j in range(n):
        for k in range(j + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[j, k] = e[k, j] = 1.0
            re = func(e) / 2.0
            e = np.zeros((n, n), dtype=complex)
            e[j, k], e[k, j] = 1j, -1j
            im = func(e) / 2.0
            # tr(A V) with V = i(E_jk - E_kj) equals 2 Im(A_jk)
            a[j, k] = re + 1j * im
            a[k, j] = np.conj(a[j, k])
    return a


def linearization(alphas, n: int) -> np.ndarray:
    """Matrix of V -> D(V, alpha_1, ..., alpha_{m-1}, I, ..., I)."""
    alphas = [as_matrix(a) for a in alphas]
    rest = [np.eye(n)] * (n - 1 - len(alphas))
    return linear_functional_matrix(lambda v: mixed_form_coefficient([v, *alphas, *rest]), n)


def boundary_diagonal_forms(n: int, m: int) -> list:
    """Diagonal forms diag(1,...,1,1-n/m) (all placements) on the boundary of Gamma_m."""
    out = []
    for i in range(n):
        d = np.ones(n)
        d[i] = 1.0 - n / m
        out.append(np.diag(d).astype(complex))
    return out


def dual_cone_sample(m: int, count: int, seed: int, n: int, extremes: bool = True) -> list:
    """Unit-trace PSD linearizations of the positivity test, seeded.

    The list starts with ``I / n``; with ``extremes`` it continues with the
    linearizations at the diagonal boundary forms of Gamma_m, then random
    draws.  A larger ``count`` with the same seed extends a smaller one.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    if not 1 <= m <= n:
        raise ValidationError(f"m={m} outside 1..{n}")
    out = [np.eye(n, dtype=complex) / n]
    if m == 1:
        return [HermitianForm(a) for a in out]
    if extremes:
        for alpha in boundary_diagonal_forms(n, m):
            out.append(linearization([alpha] * (m - 1), n))
    rng = np.random.default_rng(seed)
    while len(out) < count + (n + 1 if extremes else 1):
        alphas = [random_gamma_form(n, m, rng) for _ in range(m - 1)]
        out.append(linearization(alphas, n))
    forms = []
    for a in out:
        a = a / np.trace(a).real
        if np.linalg.eigvalsh(a).min() < -1e-10:
            raise RuntimeError("linearization left the PSD cone")
        forms.append(HermitianForm(a))
    return forms


def format_form(h) -> str:
    """Row-major text block of ``re,im`` pairs with 17 significant digits."""
    a = as_matrix(h)
    rows = [" ".join(f"{z.real:.17g},{z.imag:.17g}" for z in row) for row in a]
    return f"form {a.shape[0]}\n" + "\n".join(rows) + "\n"


def parse_form(text: str) -> HermitianForm:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "form":
        raise ValidationError("missing form header")
    n = int(head[1])
    a = np.zeros((n, n), dtype=complex)
    for j, line in enumerate(lines[1:n + 1]):
        for k, pair in enumerate(line.split()):
            re, im = pair.split(",")
            a[j, k] = complex(float(re), float(im))
    return HermitianForm(a)
