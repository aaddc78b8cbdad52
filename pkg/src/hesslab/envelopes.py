"""Discrete envelopes over a sampled dual cone.

Each dual sample A (PSD, unit trace) defines a monotone second-order operator
``L_A``; a grid function is sampled-cone subharmonic when ``L_A u >= 0`` for
every sample.  Writing ``L_A u(p) = D_A(p) (avg_A u(p) - u(p))`` with a convex
neighbour average, the envelope is the largest fixed point of

    u(p) = min(obstacle(p), min_A avg_A u(p))

with the boundary nodes held at Dirichlet values.  Policy (Howard) iteration
solves it with sparse direct solves; a compiled Gauss-Seidel sweep is kept
as the reference method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy import sparse
from scipy.optimize import nnls
from scipy.sparse.linalg import spsolve

from .cone_algebra import HermitianForm, ValidationError, dual_cone_sample
from .fields import (MollifierSpec, MshReport, combine, exhaustion_report, mollify, msh_report,
                     regularized_max, restrict_field)
from .grid import Domain, GridField, field_from_function

NNLS_TOL = 1e-12
DEFAULT_SAMPLES = 64


class ConvergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration and problem types


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 200
    method: str = "howard"
    order: str = "lexicographic"
    damping: float = 1.0
    max_sweeps: int = 200_000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValidationError("damping must lie in (0, 1]")
        if self.method not in ("howard", "gauss_seidel"):
            raise ValidationError(f"unknown method {self.method!r}")
        if self.order not in ("lexicographic", "alternating"):
            raise ValidationError(f"unknown sweep order {self.order!r}")


@dataclass
class EnvelopeProblem:
    """Obstacle, boundary or extremal envelope problem.

    obstacle: sup of sampled-cone subharmonic v <= f, boundary held at f.
    boundary: sup of v with v <= f on the boundary nodes (no interior obstacle).
    extremal: sup of v <= 0 with v <= -1 on the interior mask E, boundary 0.
    """

    domain: Domain
    m: int
    mode: str
    f: GridField | None = None
    E: np.ndarray | None = None
    dual_samples: list | None = None
    seed: int = 0

    def __post_init__(self):
        d = self.domain
        if not 1 <= self.m <= d.n:
            raise ValidationError(f"m={self.m} out of range for n={d.n}")
        if self.mode not in ("obstacle", "boundary", "extremal"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.mode in ("obstacle", "boundary"):
            if self.f is None:
                raise ValidationError(f"{self.mode} mode needs f")
            sel = d.masked if self.mode == "obstacle" else d.boundary
            if not np.all(np.isfinite(self.f.values[sel])):
                raise ValidationError("f must be finite on the masked nodes")
        else:
            if self.E is None or not self.E.any():
                raise ValidationError("extremal mode needs a nonempty E")
            if np.any(self.E & ~d.interior):
                raise ValidationError("E must lie in the interior")
            dist = d.distance_to_exterior()
            if dist[self.E].min() < 2 * d.h - 1e-9:
                raise ValidationError("E must stay at distance >= 2h from the boundary")
        if self.dual_samples is None:
            self.dual_samples = default_samples(d.n, self.m, self.seed)
        if not self.dual_samples:
            raise ValidationError("dual_samples must be nonempty")
        for a in self.dual_samples:
            a = np.asarray(a.entries if isinstance(a, HermitianForm) else a)
            if abs(np.trace(a).real - 1) > 1e-9 or np.linalg.eigvalsh(a).min() < -1e-10:
                raise ValidationError("dual samples must be PSD with unit trace")


def default_samples(n: int, m: int, seed: int = 0, count: int = DEFAULT_SAMPLES) -> list:
    if m == 1:
        return dual_cone_sample(1, 1, seed, n)
    return dual_cone_sample(m, count, seed, n)


@dataclass
class EnvelopeResult:
    u: GridField
    iterations: int
    final_residual: float
    converged: bool
    msh_certificate: dict
    boundary_report: dict
    seed: int
    samples_used: int
    samples_rejected: int
    residual_history: list = field(default_factory=list, repr=False)
    fd_report: MshReport | None = field(default=None, repr=False)

    def certificate_text(self) -> str:
        cert = self.msh_certificate
        lines = ["{",
                 f'  "verdict": "{"CONVERGED" if self.converged else "INCONCLUSIVE"}",',
                 f'  "residual": {self.final_residual:.6e},',
                 f'  "iterations": {self.iterations},',
                 f'  "seed": {self.seed},',
                 f'  "samples_used": {self.samples_used},',
                 f'  "samples_rejected": {self.samples_rejected},',
                 f'  "operator_min": {cert["operator_min"]:.6e},',
                 f'  "operator_tol": {cert["operator_tol"]:.6e},',
                 f'  "certified": {str(cert["passed"]).lower()}',
                 "}"]
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# stencils of the dual samples


def realify(a: np.ndarray) -> np.ndarray:
    """Real symmetric M (2n x 2n) with tr(A H_c(u)) = tr(M D^2 u), coordinates (x1, y1, ...)."""
    n = a.shape[0]
    d = 2 * n

    def trace_of(S):
        xx, yy = S[0::2, 0::2], S[1::2, 1::2]
        xy, yx = S[0::2, 1::2], S[1::2, 0::2]
        hc = 0.25 * (xx + yy) + 0.25j * (xy - yx)
        return float(np.einsum("kj,jk->", a, hc).real)

    M = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            S = np.zeros((d, d))
            S[i, j] = S[j, i] = 1.0
            v = trace_of(S)
            if i == j:
                M[i, i] = v
            else:
                M[i, j] = M[j, i] = v / 2
    return M


@lru_cache(maxsize=None)
def lattice_directions(d: int, r: int) -> np.ndarray:
    """Primitive integer vectors in [-r, r]^d, one per +/- pair."""
    rng = np.arange(-r, r + 1)
    grids = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)
    out = []
    for v in grids:
        nz = v[v != 0]
        if not len(nz):
            continue
        if nz[0] < 0:
            continue
        if np.gcd.reduce(np.abs(nz)) != 1:
            continue
        out.append(v)
    out = np.array(out)
    order = np.lexsort((np.abs(out).sum(axis=1), np.abs(out).max(axis=1)))
    return out[order]


def decompose(Q: np.ndarray, dirs: np.ndarray):
    """Nonnegative c with sum_k c_k d_k d_k^T = Q, or None when not representable."""
    d = Q.shape[0]
    iu = np.triu_indices(d)
    A = np.stack([np.outer(v, v)[iu] for v in dirs], axis=1).astype(float)
    b = Q[iu]
    c, res = nnls(A, b)
    scale = max(1.0, np.abs(Q).max())
    if res > NNLS_TOL * scale * 10:
        return None
    c[c < 1e-15 * scale] = 0.0
    return c


@dataclass
class Operators:
    """Per-sample neighbour tables over the interior nodes.

    ``nbr[s, i, k]`` is the flat index of a neighbour of interior node i and
    ``w[s, i, k]`` its averaging weight (rows sum to 1, or 0 where the
    sample is not representable).  ``diag[s, i]`` is the scale D_A(p).
    """

    points: np.ndarray
    nbr: np.ndarray
    w: np.ndarray
    diag: np.ndarray
    active: np.ndarray
    used: int
    rejected: int


def _mehrstellen(d: Domain):
    offs, ws = [], []
    for j in range(d.n):
        a, b = 2 * j, 2 * j + 1
        for s in (1, -1):
            for ax in (a, b):
                e = np.zeros(d.ndim, int)
                e[ax] = s
                offs.append(e)
                ws.append(4.0)
            for t in (1, -1):
                e = np.zeros(d.ndim, int)
                e[a], e[b] = s, t
                offs.append(e)
                ws.append(1.0)
    ws = np.array(ws)
    return np.array(offs), ws / ws.sum(), 20.0 * d.n / (24.0 * d.n * d.h * d.h)


def build_operators(d: Domain, samples: list) -> Operators:
    points = np.flatnonzero(d.interior.ravel())
    multi = d.multi_index(points)
    N = len(points)
    rows = []
    rejected = 0
    for a in samples:
        A = np.asarray(a.entries if isinstance(a, HermitianForm) else a)
        if d.kind == "cartesian":
            entry = _cartesian_sample(d, A)
        else:
            entry = _reduced_sample(d, A, multi)
        if entry is None:
            rejected += 1
            continue
        rows.append(entry)
    if not rows:
        raise ValidationError("no dual sample is representable on this grid")
    K = max(r[0].shape[-1] for r in rows)
    S = len(rows)
    nbr = np.tile(points[None, :, None], (S, 1, K))
    w = np.zeros((S, N, K))
    diag = np.zeros((S, N))
    for s, (offs, ws, dg) in enumerate(rows):
        k = offs.shape[-1]
        if d.kind == "cartesian":
            q = multi[:, None, :] + offs.T[None, :, :]
            nbr[s, :, :k] = np.ravel_multi_index(tuple(np.moveaxis(q, -1, 0)), d.dims)
            w[s, :, :k] = ws[None, :]
            diag[s] = dg
        else:
            nbr[s, :, :k] = offs
            w[s, :, :k] = ws
            diag[s] = dg
    active = w.sum(axis=2) > 0.5
    if not np.all(d.masked.ravel()[nbr[w > 0]]):
        raise ValidationError("a stencil leaves the masked nodes; enlarge the boundary reach")
    return Operators(points, nbr, w, diag, active, S, rejected)


def _cartesian_sample(d: Domain, A: np.ndarray):
    if np.allclose(A, np.eye(d.n) / d.n, atol=1e-14):
        offs, ws, dg = _mehrstellen(d)
        return offs.T, ws, dg
    M = realify(A)
    dirs = lattice_directions(d.ndim, 1)
    c = decompose(M, dirs)
    if c is None:
        return None
    keep = c > 0
    dirs, c = dirs[keep], c[keep]
    offs = np.concatenate([dirs, -dirs])
    ws = np.concatenate([c, c])
    total = ws.sum()
    return offs.T, ws / total, total / (d.h * d.h)


def _reduced_sample(d: Domain, A: np.ndarray, multi: np.ndarray):
    """Radial-form stencil: L u = sum c_d second differences + sum b_j U_j."""
    n, h = d.n, d.h
    R = A.real
    r = (multi + d.lo_index) * h
    dirs = lattice_directions(n, 2)
    zero = r <= 0
    patterns = {}
    N = len(multi)
    L = len(dirs)
    K = 2 * L
    nbr = np.zeros((N, K), dtype=np.int64)
    w = np.zeros((N, K))
    dg = np.zeros(N)
    axis_index = [int(np.flatnonzero((dirs == np.eye(n, dtype=int)[j]).all(axis=1))[0]) for j in range(n)]
    offs = np.concatenate([dirs, -dirs])
    for i in range(N):
        key = tuple(zero[i])
        if key not in patterns:
            Q = R / 4.0 + np.diag(np.where(zero[i], np.diag(R) / 4.0, 0.0))
            patterns[key] = decompose(Q, dirs)
        c = patterns[key]
        if c is None:
            continue
        coef = np.concatenate([c, c]) / h ** 2
        for j in range(n):
            if zero[i, j]:
                continue
            # first-order term R_jj U_j / (4 r_j): central when monotone, else upwind
            b = R[j, j] / (4.0 * r[i, j])
            ip, im = axis_index[j], L + axis_index[j]
            if coef[im] >= b / (2 * h):
                coef[ip] += b / (2 * h)
                coef[im] -= b / (2 * h)
            else:
                coef[ip] += b / h
        total = coef.sum()
        if total <= 0:
            continue
        p = multi[i]
        nz = coef > 0
        q = np.abs(p[None, :] + offs[nz])
        nbr[i] = d.flat_index(p[None, :])[0]
        nbr[i, nz] = np.ravel_multi_index(tuple(q.T), d.dims)
        w[i, nz] = coef[nz] / total
        dg[i] = total
    if not (w.sum(axis=1) > 0.5).any():
        return None
    return nbr, w, dg


# --------------------------------------------------------------------------
# solvers


@numba.njit(cache=True)
def _apply_min(u, nbr, w, active, points, obstacle, out, which):
    S, N, K = nbr.shape
    for i in range(N):
        best = obstacle[i]
        arg = -1
        for s in range(S):
            if not active[s, i]:
                continue
            acc = 0.0
            for k in range(K):
                wk = w[s, i, k]
                if wk != 0.0:
                    acc += wk * u[nbr[s, i, k]]
            if acc < best:
                best = acc
                arg = s
        out[i] = best
        which[i] = arg


@numba.njit(cache=True)
def _gs_sweep(u, nbr, w, active, points, obstacle, order, damping):
    S, N, K = nbr.shape
    change = 0.0
    for t in range(N):
        i = order[t]
        best = obstacle[i]
        for s in range(S):
            if not active[s, i]:
                continue
            acc = 0.0
            for k in range(K):
                wk = w[s, i, k]
                if wk != 0.0:
                    acc += wk * u[nbr[s, i, k]]
            if acc < best:
                best = acc
        p = points[i]
        new = u[p] + damping * (best - u[p])
        if abs(new - u[p]) > change:
            change = abs(new - u[p])
        u[p] = new
    return change


def bellman(ops: Operators, u: np.ndarray, obstacle: np.ndarray):
    out = np.empty(len(ops.points))
    which = np.empty(len(ops.points), dtype=np.int64)
    _apply_min(u, ops.nbr, ops.w, ops.active, ops.points, obstacle, out, which)
    return out, which


def _policy_solve(ops: Operators, u: np.ndarray, obstacle: np.ndarray, policy: np.ndarray, row_of: np.ndarray):
    N = len(ops.points)
    rhs = np.where(policy < 0, obstacle, 0.0)
    avg = np.flatnonzero(policy >= 0)
    s = policy[avg]
    nb = ops.nbr[s, avg]
    wt = ops.w[s, avg]
    rr = row_of[nb]
    interior = rr >= 0
    r_i = np.repeat(avg, nb.shape[1]).reshape(nb.shape)
    mask = interior & (wt != 0)
    rows = np.concatenate([np.arange(N), r_i[mask]])
    cols = np.concatenate([np.arange(N), rr[mask]])
    vals = np.concatenate([np.ones(N), -wt[mask]])
    bnd = ~interior & (wt != 0)
    np.add.at(rhs, r_i[bnd], wt[bnd] * u[nb[bnd]])
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))
    return spsolve(mat.tocsc(), rhs)


def _initial_values(p: EnvelopeProblem):
    d = p.domain
    u = np.zeros(int(np.prod(d.dims)))
    pts = np.flatnonzero(d.interior.ravel())
    bnd = np.flatnonzero(d.boundary.ravel())
    if p.mode == "obstacle":
        fv = p.f.values.ravel()
        u[bnd] = fv[bnd]
        obstacle = fv[pts].copy()
    elif p.mode == "boundary":
        fv = p.f.values.ravel()
        u[bnd] = fv[bnd]
        obstacle = np.full(len(pts), np.inf)
    else:
        obstacle = np.where(p.E.ravel()[pts], -1.0, 0.0)
    return u, pts, obstacle


def solve_envelope(p: EnvelopeProblem, cfg: SolverConfig = SolverConfig(), ops: Operators | None = None) -> EnvelopeResult:
    """Solve the discrete envelope problem; non-convergence is flagged, never hidden."""
    d = p.domain
    ops = build_operators(d, p.dual_samples) if ops is None else ops
    u, pts, obstacle = _initial_values(p)
    N = len(pts)
    row_of = np.full(u.size, -1, dtype=np.int64)
    row_of[pts] = np.arange(N)
    history = []
    converged = False
    iterations = 0
    if cfg.method == "howard":
        if p.mode == "boundary":
            policy = np.where(ops.active[0], 0, -1)
            u[pts] = _policy_solve(ops, u, np.zeros(N), policy, row_of)
        else:
            u[pts] = obstacle
            policy = np.full(N, -1)
        for it in range(1, cfg.max_iters + 1):
            iterations = it
            t, which = bellman(ops, u, obstacle)
            res = float(np.abs(u[pts] - t).max())
            history.append(res)
            if res < cfg.tol:
                converged = True
                break
            cur = np.where(policy < 0, obstacle, _policy_values(ops, u, policy))
            keep = cur <= t + 1e-15 * (1 + np.abs(t))
            policy = np.where(keep, policy, which)
            u[pts] = _policy_solve(ops, u, obstacle, policy, row_of)
        else:
            iterations = cfg.max_iters
    else:
        if p.mode == "boundary":
            ident = Operators(ops.points, ops.nbr[:1], ops.w[:1], ops.diag[:1], ops.active[:1], 1, 0)
            u[pts] = _policy_solve(ident, u, np.zeros(N), np.where(ops.active[0], 0, -1), row_of)
        else:
            u[pts] = obstacle
        order = np.arange(N)
        for it in range(1, cfg.max_sweeps + 1):
            iterations = it
            o = order if (cfg.order == "lexicographic" or it % 2) else order[::-1]
            change = _gs_sweep(u, ops.nbr, ops.w, ops.active, pts, obstacle, o, cfg.damping)
            t, _ = bellman(ops, u, obstacle)
            res = float(np.abs(u[pts] - t).max())
            history.append(res)
            if res < cfg.tol and change < cfg.tol:
                converged = True
                break
    t, _ = bellman(ops, u, obstacle)
    residual = float(np.abs(u[pts] - t).max())
    values = np.full(d.dims, np.nan)
    values.ravel()[d.masked.ravel()] = u[d.masked.ravel()]
    field_u = GridField(d, values, f"envelope:{p.mode}:m={p.m}")
    cert = operator_certificate(ops, u, obstacle, cfg.tol, d.h)
    bref = p.f.values if p.mode in ("obstacle", "boundary") else np.zeros(d.dims)
    brep = boundary_gaps(field_u, GridField(d, bref))
    return EnvelopeResult(field_u, iterations, residual, converged, cert, brep, p.seed,
                          ops.used, ops.rejected, history)


def _policy_values(ops: Operators, u: np.ndarray, policy: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(policy >= 0)
    out = np.zeros(len(policy))
    s = policy[idx]
    out[idx] = (ops.w[s, idx] * u[ops.nbr[s, idx]]).sum(axis=1)
    return out


def operator_certificate(ops: Operators, u: np.ndarray, obstacle: np.ndarray, tol: float, h: float) -> dict:
    """min over samples of L_A u on non-contact interior nodes, in Hessian units."""
    S = ops.nbr.shape[0]
    vals = (ops.w * u[ops.nbr]).sum(axis=2) - u[ops.points][None, :]
    L = np.where(ops.active, ops.diag * vals, np.inf)
    noncontact = u[ops.points] < obstacle - tol
    worst = float(L[:, noncontact].min()) if noncontact.any() else 0.0
    op_tol = 10.0 * tol / (h * h)
    return {"operator_min": worst, "operator_tol": op_tol, "passed": worst >= -op_tol,
            "noncontact": int(noncontact.sum()), "samples": S}


def scheme_certificate(f: GridField, m: int, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                       tol: float = 1e-10) -> dict:
    """Discrete m-subharmonicity in the solver's sense: L_A f >= -10 tol/h^2 for every sample A.

    Maxima and nonnegative combinations of such fields keep the property,
    which the pointwise FD test cannot see at degenerate points.
    """
    d = f.domain
    ops = build_operators(d, default_samples(d.n, m, seed, samples))
    u = np.where(d.masked, f.values, 0.0).ravel()
    return operator_certificate(ops, u, np.full(len(ops.points), np.inf), tol, d.h)


def boundary_gaps(u: GridField, f: GridField) -> dict:
    """Per boundary node, the smallest |u(q) - f(b)| over interior Chebyshev neighbours q."""
    d = u.domain
    bnd = np.flatnonzero(d.boundary.ravel())
    multi = d.multi_index(bnd)
    gaps = np.full(len(bnd), np.inf)
    offs = np.stack(np.meshgrid(*([np.arange(-1, 2)] * d.ndim), indexing="ij"), axis=-1).reshape(-1, d.ndim)
    fv = f.values.ravel()[bnd]
    uv, iv = u.values.ravel(), d.interior.ravel()
    for o in offs:
        if not o.any():
            continue
        q = multi + o
        if d.kind == "reinhardt":
            q = np.abs(q)
        ok = np.all((q >= 0) & (q < np.asarray(d.dims)), axis=1)
        flat = np.zeros(len(q), dtype=np.int64)
        flat[ok] = np.ravel_multi_index(tuple(q[ok].T), d.dims)
        ok &= iv[flat]
        g = np.where(ok, np.abs(uv[flat] - fv), np.inf)
        gaps = np.minimum(gaps, g)
    has = np.isfinite(gaps)
    worst = int(np.argmax(np.where(has, gaps, -1))) if has.any() else 0
    return {"nodes": bnd[has], "gaps": gaps[has], "max_gap": float(gaps[has].max()) if has.any() else 0.0,
            "worst_node": int(bnd[worst])}


# --------------------------------------------------------------------------
# testers


@dataclass
class Verdict:
    verdict: str
    details: dict = field(default_factory=dict)
    levels: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"


def ball_mask(d: Domain, center, radius: float) -> np.ndarray:
    """Nodes of B(center, radius); on reduced grids its torus orbit is replaced by the
    reduced ball {sum (|z_j| - |c_j|)^2 < radius^2}."""
    center = np.atleast_1d(np.asarray(center, dtype=complex))
    mask = np.zeros(d.dims, dtype=bool)
    for i0, i1 in d.slabs():
        pts = d.slab_points(i0, i1)
        if d.kind == "reinhardt":
            diff = pts.real - np.abs(center)
        else:
            diff = pts - center
        mask[i0:i1] = np.sum(np.abs(diff) ** 2, axis=-1) < radius ** 2
    return mask & d.interior


def default_ball(d: Domain):
    """Deepest interior node and half its distance to the exterior."""
    dist = d.distance_to_exterior()
    i = int(np.argmax(np.where(d.interior, dist, -1)))
    c = d.points(d.multi_index(np.array([i])))[0]
    return c, float(dist.flat[i]) / 2


def _regions(d: Domain, nodes: np.ndarray, size: float) -> np.ndarray:
    pts = d.points(d.multi_index(nodes))
    key = np.abs(pts) if d.kind == "reinhardt" else np.concatenate([pts.real, pts.imag], axis=1)
    return np.floor(key / size + 1e-9).astype(int)


def _region_max(d, rep, size):
    keys = _regions(d, rep["nodes"], size)
    out = {}
    for k, g in zip(map(tuple, keys), rep["gaps"]):
        out[k] = max(out.get(k, 0.0), float(g))
    return out


def hyperconvexity_test(domain: Domain, m: int, ball=None, cfg: SolverConfig = SolverConfig(),
                        C: float | None = None, floor: float = 0.1, region_size: float = 0.1,
                        samples: int = DEFAULT_SAMPLES, seed: int = 0) -> Verdict:
    """Refinement test for a negative m-subharmonic exhaustion.

    Solves the relative extremal problem of a ball at spacing h and h/2.
    FAIL-persistent when some boundary region keeps a gap above ``floor`` at
    both levels; PASS when the finest gap is at most C*h and the solution is
    nonpositive; FAIL otherwise; INCONCLUSIVE if a solve does not converge.
    """
    center, radius = ball if ball is not None else default_ball(domain)
    levels = []
    dual = default_samples(domain.n, m, seed, samples)
    for d in (domain, domain.refine(2)):
        E = ball_mask(d, center, radius)
        if not E.any():
            raise ValidationError("ball contains no grid node")
        res = solve_envelope(EnvelopeProblem(d, m, "extremal", E=E, dual_samples=dual, seed=seed), cfg)
        levels.append(res)
        if not res.converged:
            return Verdict("INCONCLUSIVE", {"h": d.h, "residual": res.final_residual}, levels)
    dist_E = max(float(domain.distance_to_exterior()[ball_mask(domain, center, radius)].min()), domain.h)
    lip = max(1.0, 1.0 / dist_E)
    C = 4.0 * lip if C is None else C
    regs = [_region_max(r.u.domain, r.boundary_report, region_size) for r in levels]
    persistent = {k: (regs[0][k], regs[1][k]) for k in regs[0] if k in regs[1]
                  and regs[0][k] > floor and regs[1][k] > floor}
    fine = levels[1]
    umax = float(np.nanmax(fine.u.values[fine.u.domain.interior]))
    details = {"h": [r.u.domain.h for r in levels],
               "max_gap": [r.boundary_report["max_gap"] for r in levels],
               "worst_node": [r.boundary_report["worst_node"] for r in levels],
               "C": C, "floor": floor, "u_max": umax, "ball": (center, radius),
               "iterations": [r.iterations for r in levels]}
    if persistent:
        worst = max(persistent, key=lambda k: min(persistent[k]))
        details["region"] = tuple(x * region_size for x in worst)
        details["region_gaps"] = persistent[worst]
        return Verdict("FAIL-persistent", details, levels)
    if fine.boundary_report["max_gap"] <= C * fine.u.domain.h and umax <= cfg.tol * 10:
        return Verdict("PASS", details, levels)
    return Verdict("FAIL", details, levels)


def walsh_boundary_check(r: EnvelopeResult, f: GridField, tol: float) -> dict:
    """Largest boundary attainment gap of an envelope; passes when at most ``tol``."""
    if not r.converged:
        return {"passed": False, "verdict": "INCONCLUSIVE", "max_gap": math.inf}
    rep = boundary_gaps(r.u, f)
    return {"passed": rep["max_gap"] <= tol, "verdict": "PASS" if rep["max_gap"] <= tol else "FAIL",
            "max_gap": rep["max_gap"], "worst_node": rep["worst_node"], "tol": tol}


def _distance_field(d: Domain, z0) -> GridField:
    z0 = np.atleast_1d(np.asarray(z0, dtype=complex))
    if d.kind == "reinhardt":
        return field_from_function(lambda z: -np.linalg.norm(z.real - np.abs(z0), axis=-1), d)
    return field_from_function(lambda z: -np.linalg.norm(z - z0, axis=-1), d)


def bm_regularity_test(domain: Domain, m: int, z0, cfg: SolverConfig = SolverConfig(), rho: float = 0.25,
                       gap_tol: float | None = None, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> Verdict:
    """Strong-barrier test at a boundary node.

    Solves the boundary envelope of f = -|xi - z0| and checks that it is
    attained at z0 (gap at most ``gap_tol``, default 4 h max(1, log 1/h) to
    allow the log-Lipschitz loss of Lipschitz data) and stays strictly
    negative on interior nodes at distance >= rho from z0.
    """
    d = domain
    node = d.node_of(z0)
    if not d.boundary.ravel()[node]:
        raise ValidationError("z0 must be a boundary node")
    f = _distance_field(d, z0)
    res = solve_envelope(EnvelopeProblem(d, m, "boundary", f=f,
                                         dual_samples=default_samples(d.n, m, seed, samples), seed=seed), cfg)
    if not res.converged:
        return Verdict("INCONCLUSIVE", {"residual": res.final_residual}, [res])
    rep = res.boundary_report
    gap = float(rep["gaps"][np.flatnonzero(rep["nodes"] == node)[0]])
    gap_tol = 4 * d.h * max(1.0, math.log(1 / d.h)) if gap_tol is None else gap_tol
    far = d.interior & (-f.values >= rho)
    delta = -float(np.nanmax(res.u.values[far])) if far.any() else math.inf
    ok = gap <= gap_tol and delta > cfg.tol
    return Verdict("PASS" if ok else "FAIL", {"gap": gap, "gap_tol": gap_tol, "delta": delta, "rho": rho}, [res])


# --------------------------------------------------------------------------
# exhaustion recipes


@dataclass
class Exhaustion:
    field: GridField
    certificate: dict
    weights: list


def _sq_norm_field(d: Domain) -> GridField:
    return field_from_function(lambda z: np.sum(np.abs(z) ** 2, axis=-1), d, "sq_norm")


def build_exhaustion(domain: Domain, m: int, recipe: str, cfg: SolverConfig = SolverConfig(),
                     base: GridField | None = None, tol: float = 1e-6, max_terms: int = 60,
                     mass_tol: float = 0.05, eta_scale: float = 0.5, epsilon: float | None = None,
                     samples: int = DEFAULT_SAMPLES, seed: int = 0) -> Exhaustion:
    """Assemble an exhaustion function by one of three recipes.

    strict_sum
        ``sum a_j max(u, (|z|^2 - M)/j)`` with ``a_j = 2^-j / max(sup(-psi_j), 1)``.
    bounded_mass
        ``sum a_j phi_j`` with phi_j a smoothed version of the same maxima and
        ``a_j = 2^-j / max(||phi_j||, h_j^(1/m), 1)``, h_j the Hessian mass.
    uniform
        ``PB(-2|z|^2) + |z|^2``, smoothed, certified through ``phi - |z|^2``.

    ``base`` is the negative exhaustion u; by default the relative extremal
    function of the tester's ball, which also enforces the prerequisite.
    """
    from .hessian_measure import e0_membership, hessian_density, total_mass

    d = domain
    sq = _sq_norm_field(d)
    cert = {"recipe": recipe}
    if recipe == "uniform":
        f = sq * -2.0
        res = solve_envelope(EnvelopeProblem(d, m, "boundary", f=f,
                                             dual_samples=default_samples(d.n, m, seed, samples), seed=seed), cfg)
        if not res.converged:
            raise ConvergenceError("boundary envelope did not converge")
        u = res.u
        if d.kind == "cartesian":
            eps = 2 * d.h if epsilon is None else epsilon
            v = mollify(u, MollifierSpec(eps, d.n))
        else:
            v = u
        phi = v + restrict_field(sq, v.domain)
        rep = msh_report(v, m, detail=False)
        cert.update({"msh_phi_minus_sq": rep.summary(), "passed": rep.passed,
                     "operator_certificate": res.msh_certificate, "walsh_gap": res.boundary_report["max_gap"]})
        return Exhaustion(phi, cert, [])
    if recipe not in ("strict_sum", "bounded_mass"):
        raise ValidationError(f"unknown recipe {recipe!r}")
    if base is None:
        verdict = hyperconvexity_test(d, m, cfg=cfg, samples=samples, seed=seed)
        if verdict.verdict != "PASS":
            raise ValidationError(f"prerequisite hyperconvexity test returned {verdict.verdict}")
        base = verdict.levels[0].u
    M = float(np.nanmax(sq.values[d.masked])) + 1.0
    n_terms = int(math.ceil(math.log2(1.0 / tol)))
    if n_terms > max_terms:
        raise ValidationError("tail not summable within max_terms")
    total = np.zeros(d.dims)
    weights = []
    j_omega = None
    for j in range(1, n_terms + 1):
        v = (sq - M) * (1.0 / j)
        if recipe == "strict_sum":
            term = combine("max", base, v)
            a = 2.0 ** -j / max(float(-np.nanmin(term.values[d.masked])), 1.0)
        else:
            term = regularized_max(base, v, eta_scale / j)
            # smoothed maxima are C^{1,1}: centred stencils, no crease excision
            hj = total_mass(hessian_density(term, m, creases=False))
            a = 1.0 / (2.0 ** j * max(float(np.nanmax(np.abs(term.values[d.masked]))), max(hj, 0.0) ** (1.0 / m), 1.0))
        weights.append(a)
        total = total + a * term.values
    psi = GridField(d, total, f"exhaustion:{recipe}")
    ex = exhaustion_report(psi)
    rep = msh_report(psi, m, detail=False)
    scheme = scheme_certificate(psi, m, samples, seed, cfg.tol)
    cert.update({"terms": n_terms, "negative": bool(np.nanmax(psi.values[d.interior]) <= 0),
                 "exhaustion": ex.passed, "band_sup": ex.band_sup, "msh": rep.summary(),
                 "scheme": scheme, "M": M})
    # the FD test is exact on smooth data; the scheme test covers envelope bases
    passed = cert["negative"] and ex.passed and (rep.passed or scheme["passed"])
    if recipe == "strict_sum":
        half = _half_region(d)
        inner = float(np.nanmin(-base.values[half]))
        j_omega = int(math.floor(M / inner)) + 1
        c = weights[j_omega - 1] / j_omega if j_omega <= len(weights) else 0.0
        strict = msh_report(psi, m, strict_c=c, detail=False, region=half)
        cert.update({"j_omega": j_omega, "strict_c": c, "strict": strict.summary()})
        passed = passed and strict.passed and c > 0
    else:
        sup_abs = float(np.nanmax(np.abs(psi.values[d.masked])))
        mass = total_mass(hessian_density(psi, m, creases=False))
        e0 = e0_membership(psi, m)
        cert.update({"sup_abs": sup_abs, "mass": mass, "mass_tol": mass_tol, "e0": e0})
        passed = passed and sup_abs <= 1.0 and mass <= 1.0 + mass_tol and e0["passed"]
    cert["passed"] = bool(passed)
    return Exhaustion(psi, cert, weights)


def _half_region(d: Domain) -> np.ndarray:
    """Interior nodes at least half the inradius away from the exterior."""
    dist = d.distance_to_exterior()
    return d.interior & (dist >= 0.5 * float(dist[d.interior].max()))
