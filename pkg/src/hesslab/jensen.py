"""Discrete Jensen measures over a finite certified test family.

A measure on the masked grid nodes is Jensen for ``z`` with respect to a
family F when it is a probability measure and ``sum mu(p) u(p) >= u(z)`` for
every ``u`` in F.  These sets are LP feasible regions, so the envelope side
of the duality becomes an LP over nonnegative combinations of members.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .cone_algebra import ValidationError, random_gamma_form
from .envelopes import EnvelopeProblem, SolverConfig, boundary_gaps, solve_envelope
from .fields import msh_report
from .grid import Domain, GridField, eval_closed_form, hermitian_quadratic, field_from_function
from .simplex import linprog_bland

WEIGHT_FLOOR = 1e-15


@dataclass
class LPConfig:
    tol: float = 1e-9
    duality_tol: float = 1e-8
    max_iter: int = 50_000


@dataclass
class TestFamily:
    __test__ = False  # not a pytest class

    domain: Domain
    m: int
    members: list
    names: list
    spec: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.members)

    def matrix(self) -> np.ndarray:
        """Member values on the masked nodes, shape (len, nodes)."""
        mask = self.domain.masked.ravel()
        return np.array([u.values.ravel()[mask] for u in self.members])

    def extended(self, extra: list, names: list | None = None) -> "TestFamily":
        names = names or [f"extra{i}" for i in range(len(extra))]
        tol = self.spec.get("cert_tol", 1e-9)
        for u, name in zip(extra, names):
            _certify(u, self.m, name, tol)
        return TestFamily(self.domain, self.m, self.members + list(extra), self.names + list(names), self.spec)


@dataclass
class DiscreteMeasure:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValidationError("measure weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValidationError("measure weights must sum to 1")

    def integrate(self, f: GridField) -> float:
        return float(self.weights @ f.values.ravel()[self.support])

    def to_csv(self) -> str:
        rows = ["node,weight"] + [f"{int(i)},{w:.17g}" for i, w in zip(self.support, self.weights)]
        return "\n".join(rows) + "\n"


def _certify(u: GridField, m: int, name: str, tol: float = 1e-9):
    v = u.masked_values()
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"family member {name!r} is not finite on the masked nodes")
    rep = msh_report(u, m, tol=tol, detail=False)
    if not rep.passed:
        raise ValidationError(f"family member {name!r} fails m-subharmonicity "
                              f"(worst margin {rep.worst_margin:.3e})")


def _monomials(n: int, degree: int):
    for deg in range(1, degree + 1):
        yield from itertools.combinations_with_replacement(range(n), deg)


def build_test_family(domain: Domain, m: int, quadratic_count: int = 8, seed: int = 0,
                      extra: list | None = None, extra_names: list | None = None,
                      holomorphic_degree: int = 1, cert_tol: float = 1e-9) -> TestFamily:
    """Deterministic family: constants, pluriharmonic coordinates, Gamma_m quadratics, extras.

    ``holomorphic_degree`` > 1 adds the real and imaginary parts (both signs)
    of all holomorphic monomials up to that degree, which sharpens the
    discrete Jensen sets along the boundary.  ``cert_tol`` is the cone
    tolerance used to certify extras; harmonic terms such as log|w| carry a
    small stencil truncation error and need a looser value.

    On reduced grids only torus-invariant members are meaningful, so the
    linear coordinates are dropped and quadratics are replaced by their
    diagonal, which stays in the cone.
    """
    if quadratic_count < 1:
        raise ValidationError("quadratic_count must be >= 1")
    if not 1 <= m <= domain.n:
        raise ValidationError(f"m={m} out of range for n={domain.n}")
    n = domain.n
    members, names = [], []

    def const(c):
        return GridField(domain, np.where(domain.masked, c, np.nan), f"constant({c:g})")

    members += [const(1.0), const(-1.0)]
    names += ["const+1", "const-1"]
    if domain.kind == "cartesian":
        for mono in _monomials(n, holomorphic_degree):
            label = "*".join(f"z{j + 1}" for j in mono)
            for part, fn in (("re", np.real), ("im", np.imag)):
                for s in (1.0, -1.0):
                    members.append(field_from_function(
                        lambda z, mono=mono, fn=fn, s=s: s * fn(np.prod(z[:, list(mono)], axis=1)),
                        domain, f"{'+' if s > 0 else '-'}{part}({label})"))
                    names.append(members[-1].provenance)
    rng = np.random.default_rng(seed)
    for i in range(quadratic_count):
        a = random_gamma_form(n, m, rng)
        if domain.kind == "reinhardt":
            a = np.diag(np.diag(a).real)
        a = a / max(np.abs(np.linalg.eigvalsh(a)).max(), 1e-12)
        members.append(eval_closed_form(hermitian_quadratic(a), domain))
        names.append(f"quadratic{i}")
    for u, name in zip(members[-quadratic_count:], names[-quadratic_count:]):
        _certify(u, m, name, cert_tol)
    fam = TestFamily(domain, m, members, names,
                     {"quadratic_count": quadratic_count, "seed": seed, "extra": len(extra or []),
                      "holomorphic_degree": holomorphic_degree, "cert_tol": cert_tol})
    if extra:
        fam = fam.extended(list(extra), extra_names)
    return fam


def _node(domain: Domain, z) -> int:
    if isinstance(z, (int, np.integer)):
        node = int(z)
    else:
        node = domain.node_of(z)
    if not domain.masked.ravel()[node]:
        raise ValidationError(f"node {node} is not an interior or boundary node")
    return node


def _column(domain: Domain, node: int) -> int:
    return int(np.count_nonzero(domain.masked.ravel()[:node]))


def _distinct_rows(U: np.ndarray) -> np.ndarray:
    """Indices of pairwise distinct member rows (duplicates add only degeneracy)."""
    scale = max(1.0, float(np.abs(U).max()))
    _, idx = np.unique(np.round(U / scale, 12), axis=0, return_index=True)
    return np.sort(idx)


def _jensen_lp(U: np.ndarray, col: int, objective: np.ndarray, cfg: LPConfig):
    """Jensen LP started from the point mass at column ``col`` (all slacks basic at zero)."""
    U = U[_distinct_rows(U)]
    k, P = U.shape
    basis = list(range(P, P + k)) + [col]
    return linprog_bland(objective, A_eq=np.ones((1, P)), b_eq=[1.0], A_ub=-U, b_ub=-U[:, col],
                         max_iter=cfg.max_iter, basis=basis)


def _measure(domain: Domain, x: np.ndarray) -> DiscreteMeasure:
    nodes = np.flatnonzero(domain.masked.ravel())
    keep = x > WEIGHT_FLOOR
    w = x[keep] / x[keep].sum()
    return DiscreteMeasure(nodes[keep], w)


def jensen_lp_min(z, g: GridField, fam: TestFamily, cfg: LPConfig = LPConfig()):
    """``min sum mu g`` over discrete Jensen measures of ``z``; returns (value, measure)."""
    d = fam.domain
    node = _node(d, z)
    gv = g.values.ravel()[d.masked.ravel()]
    if not np.all(np.isfinite(gv)):
        raise ValidationError("g must be finite on the masked nodes")
    U = fam.matrix()
    col = _column(d, node)
    res = _jensen_lp(U, col, gv, cfg)
    mu = _measure(d, res.x)
    return float(gv @ res.x), mu


def sup_side(z, g: GridField, fam: TestFamily, cfg: LPConfig = LPConfig()) -> tuple:
    """``max t + sum c_i u_i(z)`` over ``c >= 0`` with ``t + sum c_i u_i <= g`` on the nodes."""
    d = fam.domain
    node = _node(d, z)
    gv = g.values.ravel()[d.masked.ravel()]
    U = fam.matrix()
    col = _column(d, node)
    k, P = U.shape
    # variables: t+, t-, c
    A = np.column_stack([np.ones(P), -np.ones(P), U.T])
    obj = -np.concatenate([[1.0, -1.0], U[:, col]])
    # start from t = min g: t+ or t- basic on the argmin row, slacks elsewhere
    low = int(np.argmin(gv))
    basis = [k + 2 + p for p in range(P)]
    basis[low] = 0 if gv[low] >= 0 else 1
    res = linprog_bland(obj, A_ub=A, b_ub=gv, max_iter=cfg.max_iter, basis=basis)
    c = res.x[2:]
    return -res.value, res.x[0] - res.x[1], c


def edwards_gap(z, g: GridField, fam: TestFamily, cfg: LPConfig = LPConfig()) -> float:
    """Absolute difference between the envelope side and the Jensen side at z."""
    low, _ = jensen_lp_min(z, g, fam, cfg)
    high, _, _ = sup_side(z, g, fam, cfg)
    return abs(high - low)


@dataclass
class MassProfile:
    nodes: np.ndarray
    mass: np.ndarray
    bound: np.ndarray | None
    delta: float | None

    @property
    def passed(self) -> bool:
        if self.bound is None:
            return True
        return bool(np.all(self.mass <= self.bound + 1e-9))

    def to_csv(self) -> str:
        rows = ["node,mass,bound"]
        for i, node in enumerate(self.nodes):
            b = "" if self.bound is None else f"{self.bound[i]:.17g}"
            rows.append(f"{int(node)},{self.mass[i]:.17g},{b}")
        return "\n".join(rows) + "\n"


def boundary_mass_profile(domain: Domain, m: int, fam: TestFamily, K: np.ndarray,
                          exhaustion: int | None = None, nodes=None, cfg: LPConfig = LPConfig()) -> MassProfile:
    """Largest Jensen mass that a boundary node can put on the compact set K.

    With ``exhaustion`` (index of a member u <= 0 inside) the arithmetic bound
    ``mu(K) <= (max_{p not in K} u(p) - u(z)) / min_K(-u)`` is attached per node.
    """
    if fam.domain is not domain or fam.m != m:
        raise ValidationError("family does not match domain and m")
    if not K.any() or np.any(K & ~domain.interior):
        raise ValidationError("K must be a nonempty set of interior nodes")
    mask = domain.masked.ravel()
    kcol = K.ravel()[mask].astype(float)
    U = fam.matrix()
    nodes = np.flatnonzero(domain.boundary.ravel()) if nodes is None else np.asarray(nodes)
    mass = np.empty(len(nodes))
    for i, node in enumerate(nodes):
        res = _jensen_lp(U, _column(domain, _node(domain, int(node))), -kcol, cfg)
        mass[i] = -res.value
    bound = delta = None
    if exhaustion is not None:
        u = U[exhaustion]
        delta = float(-u[kcol > 0].max())
        if delta <= 0:
            raise ValidationError("exhaustion must be negative on K")
        outside = max(0.0, float(u[kcol == 0].max()))
        cols = np.array([_column(domain, int(node)) for node in nodes])
        bound = (outside - u[cols]) / delta
    return MassProfile(nodes, mass, bound, delta)


@dataclass
class ScanReport:
    flagged: np.ndarray
    checked: np.ndarray
    values: np.ndarray

    def to_csv(self, domain: Domain) -> str:
        rows = ["node,boundary,flagged,worst_drop"]
        fl = set(self.flagged.tolist())
        for node, drop in zip(self.checked, self.values):
            rows.append(f"{int(node)},{int(domain.boundary.ravel()[node])},{int(node in fl)},{drop:.17g}")
        return "\n".join(rows) + "\n"


def default_probes(domain: Domain) -> list:
    """Strictly concave radial probes centred at the origin and at each axis point."""
    n = domain.n
    centers = [np.zeros(n)] + [np.eye(n)[j] * 0.5 for j in range(n)]
    out = []
    for c in centers:
        if domain.kind == "reinhardt":
            out.append(field_from_function(lambda z, c=c: -np.sum((z.real - c) ** 2, axis=-1), domain))
        else:
            out.append(field_from_function(lambda z, c=c: -np.sum(np.abs(z - c) ** 2, axis=-1), domain))
    return out


def jensen_boundary_scan(domain: Domain, m: int, fam: TestFamily, probes: list | None = None,
                         nodes=None, cfg: LPConfig = LPConfig()) -> ScanReport:
    """Nodes whose every probe value equals the point evaluation (Jensen-trivial nodes)."""
    probes = default_probes(domain) if probes is None else probes
    mask = domain.masked.ravel()
    U = fam.matrix()
    for g in probes:
        gv = g.values.ravel()[mask]
        if any(np.allclose(gv, u) for u in U):
            raise ValidationError("probes must not be family members")
    nodes = np.flatnonzero(mask) if nodes is None else np.asarray(nodes)
    drops = np.zeros(len(nodes))
    for i, node in enumerate(nodes):
        col = _column(domain, _node(domain, int(node)))
        for g in probes:
            gv = g.values.ravel()[mask]
            res = _jensen_lp(U, col, gv, cfg)
            drops[i] = max(drops[i], gv[col] - res.value)
    flagged = nodes[drops <= cfg.tol]
    return ScanReport(flagged, nodes, drops)


@dataclass
class ExtensionResult:
    verdict: str
    extension: GridField | None
    details: dict = field(default_factory=dict)
    witness_node: int | None = None
    witness_measure: DiscreteMeasure | None = None

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"


def harmonic_extension(f: GridField, cfg: SolverConfig = SolverConfig()) -> GridField:
    """Discrete harmonic extension of the boundary values of f."""
    d = f.domain
    res = solve_envelope(EnvelopeProblem(d, 1, "boundary", f=f), cfg)
    if not res.converged:
        raise ValidationError("harmonic extension did not converge")
    return res.u


def boundary_extension_check(domain: Domain, m: int, f: GridField, fam: TestFamily,
                             cfg: SolverConfig = SolverConfig(), lp: LPConfig = LPConfig(),
                             gap_tol: float | None = None, nodes=None) -> ExtensionResult:
    """Jensen criterion for boundary data f, then the envelope of its extension.

    FAIL carries the boundary node with the largest drop ``F(z) - inf int F dmu``
    and its optimal measure.  On PASS the envelope below the extension is
    returned and must attain f on the boundary within ``gap_tol``.
    """
    if fam.domain is not domain or fam.m != m:
        raise ValidationError("family does not match domain and m")
    F = harmonic_extension(f, cfg)
    nodes = np.flatnonzero(domain.boundary.ravel()) if nodes is None else np.asarray(nodes)
    worst, witness, drop_max = None, None, 0.0
    for node in nodes:
        value, mu = jensen_lp_min(int(node), F, fam, lp)
        drop = F.values.ravel()[node] - value
        if drop > drop_max:
            worst, witness, drop_max = int(node), mu, drop
    details = {"max_drop": drop_max, "checked": len(nodes)}
    if drop_max > lp.tol:
        return ExtensionResult("FAIL", None, details, worst, witness)
    res = solve_envelope(EnvelopeProblem(domain, m, "obstacle", f=F), cfg)
    if not res.converged:
        return ExtensionResult("INCONCLUSIVE", None, {**details, "residual": res.final_residual})
    gap_tol = 4 * domain.h if gap_tol is None else gap_tol
    rep = boundary_gaps(res.u, f)
    details.update(max_gap=rep["max_gap"], gap_tol=gap_tol)
    if rep["max_gap"] > gap_tol:
        return ExtensionResult("FAIL", res.u, details, rep["worst_node"])
    return ExtensionResult("PASS", res.u, details)
