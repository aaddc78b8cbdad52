"""Finite-difference complex Hessians, m-subharmonicity reports and field operations.

Cartesian Hessians use the nine-point (Mehrstellen) Laplacian in each complex
coordinate plane for the diagonal entries and plain cross differences for the
off-diagonal ones.  Both are exact on quadratics; the nine-point form is also
monotone and accurate to high order on plane-harmonic functions such as
``log|w|``.  Reduced (Reinhardt) grids use the radial form
``H_jk = (U_jk + delta_jk U_j / r_j) / 4``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .cone_algebra import (DEFAULT_CONE_TOL, HermitianForm, ValidationError, linearization,
                   random_gamma_form, sigma_all)
from .grid import SENTINEL_CUTOFF, Domain, GridField, _dilate
from .stencils import apply_stencil, flat_offsets, plane_laplacian

POINT_CHUNK = 1 << 18
CREASE_RATIO = 0.5


class StencilError(ValidationError):
    pass


# --------------------------------------------------------------------------
# stencil gathering


def _unit(d: int, a: int, s: int = 1) -> np.ndarray:
    e = np.zeros(d, dtype=int)
    e[a] = s
    return e


def gather(f: GridField, multi: np.ndarray, off) -> np.ndarray:
    """Values at ``multi + off``; NaN off the grid, off the masks or at sentinels.

    Reduced grids reflect negative moduli indices.
    """
    d = f.domain
    q = multi + np.asarray(off, dtype=int)
    if d.kind == "reinhardt":
        q = np.abs(q)
    ok = np.all((q >= 0) & (q < np.asarray(d.dims)), axis=1)
    out = np.full(len(q), np.nan)
    flat = np.ravel_multi_index(tuple(q[ok].T), d.dims)
    v = f.values.ravel()[flat]
    v = np.where(d.masked.ravel()[flat] & (v > SENTINEL_CUTOFF), v, np.nan)
    out[ok] = v
    return out


def _hessian_cartesian(g, n: int, h: float, diag_only: bool) -> np.ndarray:
    u0 = g(np.zeros(2 * n, dtype=int))
    H = np.zeros(u0.shape + (n, n), dtype=complex)
    d = 2 * n
    for j in range(n):
        a, b = 2 * j, 2 * j + 1
        ea, eb = _unit(d, a), _unit(d, b)
        axis = g(ea) + g(-ea) + g(eb) + g(-eb)
        diag = g(ea + eb) + g(ea - eb) + g(-ea + eb) + g(-ea - eb)
        H[..., j, j] = (4.0 * axis + diag - 20.0 * u0) / (24.0 * h * h)
    if diag_only:
        return H

    def cross(a, b):
        ea, eb = _unit(d, a), _unit(d, b)
        return (g(ea + eb) - g(ea - eb) - g(-ea + eb) + g(-ea - eb)) / (4.0 * h * h)

    for j in range(n):
        for l in range(j + 1, n):
            xx, yy = cross(2 * j, 2 * l), cross(2 * j + 1, 2 * l + 1)
            xy, yx = cross(2 * j, 2 * l + 1), cross(2 * j + 1, 2 * l)
            H[..., j, l] = 0.25 * (xx + yy) + 0.25j * (xy - yx)
            H[..., l, j] = np.conj(H[..., j, l])
    return H


def _hessian_reduced(g, r: np.ndarray, h: float, diag_only: bool) -> np.ndarray:
    n = r.shape[1]
    u0 = g(np.zeros(n, dtype=int))
    H = np.zeros((len(u0), n, n), dtype=complex)
    for j in range(n):
        e = _unit(n, j)
        up, um = g(e), g(-e)
        ujj = (up - 2.0 * u0 + um) / (h * h)
        uj = (up - um) / (2.0 * h)
        rj = r[:, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            H[:, j, j] = np.where(rj > 0, 0.25 * (ujj + uj / np.where(rj > 0, rj, 1.0)), 0.5 * ujj)
    if diag_only:
        return H
    for j in range(n):
        for l in range(j + 1, n):
            ej, el = _unit(n, j), _unit(n, l)
            c = (g(ej + el) - g(ej - el) - g(-ej + el) + g(-ej - el)) / (4.0 * h * h)
            H[:, j, l] = H[:, l, j] = 0.25 * c
    return H


def hessians_at(f: GridField, multi: np.ndarray, diag_only: bool = False):
    """Batched FD complex Hessians at grid multi-indices.

    Returns ``(H, ok)`` with H shaped (k, n, n); ``ok`` is False where a
    stencil value is missing or a sentinel.
    """
    d = f.domain
    multi = np.asarray(multi, dtype=int).reshape(-1, d.ndim)

    def g(off):
        return gather(f, multi, off)

    if d.kind == "reinhardt":
        r = (multi + d.lo_index) * d.h
        H = _hessian_reduced(g, r, d.h, diag_only)
    else:
        H = _hessian_cartesian(g, d.n, d.h, diag_only)
    ok = np.all(np.isfinite(H.real) & np.isfinite(H.imag), axis=(1, 2))
    return H, ok


def _slab_hessians(f: GridField, diag_only: bool):
    """Cartesian fast path: Hessians of interior nodes, slab by slab along axis 0.

    Yields ``(flat, H, ok)`` in row-major order.
    """
    d = f.domain
    n, h = d.n, d.h
    nd = d.ndim
    stride = int(np.prod(d.dims[1:]))
    masked = d.masked
    for i0, i1 in d.slabs():
        i0, i1 = max(i0, 1), min(i1, d.dims[0] - 1)
        if i0 >= i1:
            continue
        core_int = d.interior[(slice(i0, i1),) + (slice(1, -1),) * (nd - 1)]
        if not core_int.any():
            continue
        lo, hi = max(i0 - 1, 0), min(i1 + 1, d.dims[0])
        block = f.values[lo:hi]
        block = np.where(masked[lo:hi] & (block > SENTINEL_CUTOFF), block, np.nan)
        base = i0 - lo

        def g(off, base=base, block=block, L=i1 - i0):
            sl = [slice(base + off[0], base + off[0] + L)]
            for a in range(1, nd):
                sl.append(slice(1 + off[a], d.dims[a] - 1 + off[a]))
            return block[tuple(sl)]

        H = _hessian_cartesian(g, n, h, diag_only)[core_int]
        ok = np.all(np.isfinite(H.real) & np.isfinite(H.imag), axis=(1, 2))
        full = np.zeros((i1 - i0,) + tuple(d.dims[1:]), dtype=bool)
        full[(slice(None),) + (slice(1, -1),) * (nd - 1)] = core_int
        flat = np.flatnonzero(full) + i0 * stride
        yield flat, H, ok


def _all_hessians(f: GridField, diag_only: bool, region_flat=None):
    d = f.domain
    if d.kind == "cartesian" and diag_only:
        vals, msk = f.values.ravel(), d.masked.ravel()
        planes = []
        for j in range(d.n):
            offs, w = plane_laplacian(d.ndim, j)
            planes.append((flat_offsets(d.dims, offs), w / (24.0 * d.h * d.h)))
        for flat in interior_chunks(d):
            if region_flat is not None:
                flat = flat[region_flat[flat]]
                if not len(flat):
                    continue
            H = np.zeros((len(flat), d.n, d.n), dtype=complex)
            for j, (offs, w) in enumerate(planes):
                H[:, j, j] = apply_stencil(vals, msk, flat, offs, w)
            yield flat, H, np.isfinite(H.real).all(axis=(1, 2))
        return
    if d.kind == "cartesian":
        for flat, H, ok in _slab_hessians(f, diag_only):
            if region_flat is not None:
                sel = region_flat[flat]
                flat, H, ok = flat[sel], H[sel], ok[sel]
            if len(flat):
                yield flat, H, ok
        return
    for flat in interior_chunks(d):
        if region_flat is not None:
            flat = flat[region_flat[flat]]
            if not len(flat):
                continue
        H, ok = hessians_at(f, d.multi_index(flat), diag_only)
        yield flat, H, ok


def complex_hessian_fd(f: GridField, p) -> HermitianForm:
    """FD complex Hessian at one interior node (complex point or flat index)."""
    d = f.domain
    flat = int(p) if isinstance(p, (int, np.integer)) else d.node_of(p)
    if not d.interior.ravel()[flat]:
        raise StencilError("point is not an interior node")
    H, ok = hessians_at(f, d.multi_index(np.array([flat])))
    if not ok[0]:
        raise StencilError("stencil leaves the domain or touches a sentinel")
    return HermitianForm(H[0])


def interior_chunks(d: Domain, size: int = POINT_CHUNK):
    """Flat indices of interior nodes in row-major order, in chunks."""
    stride = int(np.prod(d.dims[1:]))
    buf = []
    count = 0
    for i0, i1 in d.slabs():
        idx = np.flatnonzero(d.interior[i0:i1]) + i0 * stride
        buf.append(idx)
        count += len(idx)
        if count >= size:
            yield np.concatenate(buf)
            buf, count = [], 0
    if count:
        yield np.concatenate(buf)


def _margins(H: np.ndarray, m: int):
    """Sigma values (k, m) and margins from a batch of Hessians."""
    if m == 1:
        s = np.trace(H, axis1=1, axis2=2).real[:, None]
    else:
        lam = np.linalg.eigvalsh(H)
        s = sigma_all(lam, m)
    return s, s.min(axis=1)


# --------------------------------------------------------------------------
# crease handling


@lru_cache(maxsize=None)
def stencil_directions(ndim: int) -> np.ndarray:
    """Axis and diagonal offsets reached by the Hessian stencils."""
    dirs = [_unit(ndim, a) for a in range(ndim)]
    for a in range(ndim):
        for b in range(a + 1, ndim):
            dirs.append(_unit(ndim, a) + _unit(ndim, b))
            dirs.append(_unit(ndim, a) - _unit(ndim, b))
    return np.array(dirs)


def _pair_background(x, y):
    """Mean of two flanking second differences, using whichever exist (0 if neither)."""
    both = np.where(np.isnan(x), y, np.where(np.isnan(y), x, 0.5 * (x + y)))
    return np.nan_to_num(both, nan=0.0)


def crease_axes(f: GridField, multi: np.ndarray) -> np.ndarray:
    """Boolean (k, ndirs): convex max-crease detected along each stencil direction.

    A gradient jump between two nodes inflates the two second differences
    centred at them and leaves the flanking ones at the smooth level, so a
    node is flagged when, together with one neighbour, its second difference
    stands well above the flanking pair.  A curvature jump (a C^{1,1} join
    such as a smoothed maximum) raises one flank as well and is not flagged.
    Directions are those of ``stencil_directions``.
    """
    d = f.domain
    dirs = stencil_directions(d.ndim)
    out = np.zeros((len(multi), len(dirs)), dtype=bool)
    u0 = gather(f, multi, dirs[0] * 0)
    tau = 1e-12 * (1.0 + np.abs(u0))
    for a, e in enumerate(dirs):
        u = {k: gather(f, multi, k * e) for k in (-3, -2, -1, 1, 2, 3)}
        u[0] = u0
        sd = {k: u[k + 1] - 2 * u[k] + u[k - 1] for k in (-2, -1, 0, 1, 2)}
        hit = np.zeros(len(multi), dtype=bool)
        for s in (1, -1):
            pair = sd[0] + sd[s]
            back = 2.0 * _pair_background(sd[-s], sd[2 * s])
            with np.errstate(invalid="ignore"):
                hit |= (sd[0] > tau) & (pair - back > CREASE_RATIO * pair)
        out[:, a] = hit
    return out


@lru_cache(maxsize=None)
def _sign_vectors(k: int) -> np.ndarray:
    grid = np.array(list(itertools.product((-1, 0, 1), repeat=k)))
    return grid[np.any(grid != 0, axis=1)]


def one_sided_hessians(f: GridField, multi: np.ndarray, axes: np.ndarray):
    """Hessians whose stencils sit on one side of a detected crease.

    For each flagged node the stencil centre is shifted by one and two steps
    along every sign vector over the real axes touched by the flagged
    directions; near a locally flat crease one of these shifts clears it.
    Shifted stencils that still detect a crease are discarded.
    Returns ``(owner, H)``: ``owner[i]`` is the row of ``multi`` that
    candidate Hessian ``H[i]`` belongs to.
    """
    d = f.domain
    dirs = stencil_directions(d.ndim)
    touched = (axes.astype(np.int8) @ (dirs != 0).astype(np.int8)) > 0
    owners, cands = [], []
    for key in np.unique(touched, axis=0):
        if not key.any():
            continue
        rows = np.flatnonzero(np.all(touched == key, axis=1))
        idx = np.flatnonzero(key)
        for sv in _sign_vectors(len(idx)):
            shift = np.zeros(d.ndim, dtype=int)
            shift[idx] = sv
            for k in (1, 2):
                q = multi[rows] + k * shift
                if d.kind == "reinhardt":
                    q = np.abs(q)
                ok = np.all((q >= 0) & (q < np.asarray(d.dims)), axis=1)
                q, r = q[ok], rows[ok]
                ok = d.interior[tuple(q.T)]
                owners.append(r[ok])
                cands.append(q[ok])
    if not owners:
        return np.zeros(0, dtype=int), np.zeros((0, d.n, d.n), dtype=complex)
    owner = np.concatenate(owners)
    q = np.concatenate(cands)
    # keep only stencils that are themselves crease-free
    clean = ~crease_axes(f, q).any(axis=1)
    owner, q = owner[clean], q[clean]
    H, ok = hessians_at(f, q)
    return owner[ok], H[ok]


# --------------------------------------------------------------------------
# reports


@dataclass
class MshReport:
    m: int
    tol: float
    passed: bool
    n_points: int
    n_pass: int
    n_skipped: int
    n_crease: int
    worst_margin: float
    worst_point: tuple
    definition_worst: float | None = None
    flat: np.ndarray | None = field(default=None, repr=False)
    margins: np.ndarray | None = field(default=None, repr=False)
    sigmas: np.ndarray | None = field(default=None, repr=False)

    @property
    def fraction(self) -> float:
        return self.n_pass / max(1, self.n_points)

    def summary(self) -> dict:
        return {"m": self.m, "passed": self.passed, "fraction": self.fraction,
                "worst_margin": self.worst_margin, "worst_point": self.worst_point,
                "points": self.n_points, "skipped": self.n_skipped, "creases": self.n_crease,
                "definition_worst": self.definition_worst}

    def to_csv(self) -> str:
        if self.flat is None:
            raise ValidationError("report was built without point detail")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "margin"] + [f"sigma_{k + 1}" for k in range(self.m)])
        for i, mg, s in zip(self.flat, self.margins, self.sigmas):
            w.writerow([int(i), f"{mg:.17g}"] + [f"{x:.17g}" for x in s])
        return buf.getvalue()


def msh_report(f: GridField, m: int, strict_c: float | None = None, random_alpha_count: int = 0,
               tol: float = DEFAULT_CONE_TOL, seed: int = 0, detail: bool = True,
               region: np.ndarray | None = None) -> MshReport:
    """Certify m-subharmonicity of a grid field at every interior node.

    Parameters
    ----------
    strict_c : float, optional
        Test ``u - c|z|^2`` instead of ``u``.
    random_alpha_count : int
        Number of random (m-1)-tuples from the cone for the wedge-product test.
    region : bool array, optional
        Restrict the check to interior nodes in this mask.
    """
    d = f.domain
    n = d.n
    if not 1 <= m <= n:
        raise ValidationError(f"m={m} out of range for n={n}")
    lin = None
    if random_alpha_count > 0 and m > 1:
        rng = np.random.default_rng(seed)
        lin = np.array([linearization([random_gamma_form(n, m, rng) for _ in range(m - 1)], n)
                        for _ in range(random_alpha_count)])
    elif random_alpha_count > 0:
        lin = np.eye(n)[None] / n
    keep_flat, keep_marg, keep_sig = [], [], []
    n_points = n_pass = n_skipped = n_crease = 0
    worst, worst_flat = math.inf, -1
    def_worst = math.inf if lin is not None else None
    region_flat = None if region is None else region.ravel()
    for flat, H, ok in _all_hessians(f, m == 1 and lin is None, region_flat):
        n_skipped += int((~ok).sum())
        flat, H = flat[ok], H[ok]
        if strict_c is not None:
            H = H - strict_c * np.eye(n)
        sig, marg = _margins(H, m)
        bad = np.flatnonzero(marg < -tol)
        if len(bad):
            multi = d.multi_index(flat[bad])
            axes = crease_axes(f, multi)
            flagged = np.flatnonzero(axes.any(axis=1))
            n_crease += len(flagged)
            owner, Ha = one_sided_hessians(f, multi[flagged], axes[flagged])
            if len(owner):
                if strict_c is not None:
                    Ha = Ha - strict_c * np.eye(n)
                s2, m2 = _margins(Ha, m)
                order = np.lexsort((-m2, owner))
                first = order[np.r_[True, owner[order][1:] != owner[order][:-1]]]
                rows = bad[flagged[owner[first]]]
                better = m2[first] > marg[rows]
                sig[rows[better]] = s2[first[better]]
                marg[rows[better]] = m2[first[better]]
        if lin is not None:
            vals = np.einsum("akj,pjk->pa", lin, H).real.min(axis=1)
            def_worst = min(def_worst, float(vals.min()))
        n_points += len(flat)
        n_pass += int((marg >= -tol).sum())
        i = int(np.argmin(marg))
        if marg[i] < worst:
            worst, worst_flat = float(marg[i]), int(flat[i])
        if detail:
            keep_flat.append(flat)
            keep_marg.append(marg)
            keep_sig.append(sig)
    if n_points == 0:
        raise ValidationError("no interior point has a complete stencil")
    wp = tuple(np.round(d.points(d.multi_index(np.array([worst_flat])))[0], 12))
    rep = MshReport(m, tol, n_pass == n_points, n_points, n_pass, n_skipped, n_crease, worst, wp, def_worst)
    if detail:
        rep.flat = np.concatenate(keep_flat)
        rep.margins = np.concatenate(keep_marg)
        rep.sigmas = np.concatenate(keep_sig)
    return rep


@dataclass
class ExhaustionReport:
    passed: bool
    band_sup: float
    band_tol: float
    max_value: float
    negativity_violations: int
    levels: np.ndarray = field(repr=False)
    level_distances: np.ndarray = field(repr=False)
    sublevels_ok: bool = True


def exhaustion_report(f: GridField, band_width: float | None = None, band_tol: float | None = None,
                      levels: int = 8, tol: float = 1e-12) -> ExhaustionReport:
    """Check that a field is a negative exhaustion at grid resolution.

    The band is the set of interior nodes within ``band_width`` (default 2h)
    of the exterior.  Passing requires negativity, a band supremum of at
    least ``-band_tol`` (default 4h), and sublevel sets whose distance to the
    exterior is positive and grows as the level decreases.
    """
    d = f.domain
    h = d.h
    band_width = 2 * h if band_width is None else band_width
    band_tol = 4 * h if band_tol is None else band_tol
    dist = d.distance_to_exterior()
    vals = f.values[d.interior]
    dv = dist[d.interior].astype(float)
    band = dv <= band_width + 1e-12
    band_sup = float(vals[band].max()) if band.any() else -math.inf
    viol = int((vals > tol).sum())
    lo = float(vals.min())
    cs = np.linspace(lo, band_sup, levels + 2)[1:-1] if band_sup > lo else np.array([])
    ds = np.array([dv[vals < c].min() for c in cs]) if len(cs) else np.array([])
    ok_levels = bool(np.all(ds > 0) and np.all(np.diff(ds) <= 1e-12))
    passed = viol == 0 and band_sup >= -band_tol and ok_levels
    return ExhaustionReport(passed, band_sup, band_tol, float(vals.max()), viol, cs, ds, ok_levels)


# --------------------------------------------------------------------------
# combinations


def _same_domain(u: GridField, v: GridField):
    if u.domain is not v.domain and u.domain.checksum() != v.domain.checksum():
        raise ValidationError("fields live on different domains")


def combine(op: str, u: GridField, v: GridField, s: float = 1.0, t: float = 1.0,
            omega: np.ndarray | None = None, tol: float = 1e-9) -> GridField:
    """Pointwise combinations preserving m-subharmonicity.

    ``op`` is ``max``, ``affine`` (s*u + t*v with s, t >= 0) or ``glue``
    (u outside ``omega``, max(u, v) on it).  Gluing requires v <= u on the
    inner boundary ring of ``omega``.
    """
    _same_domain(u, v)
    if op == "max":
        return u.with_values(np.maximum(u.values, v.values))
    if op == "affine":
        if s < 0 or t < 0:
            raise ValidationError("affine coefficients must be nonnegative")
        return u.with_values(s * u.values + t * v.values)
    if op == "glue":
        if omega is None:
            raise ValidationError("glue needs a mask")
        d = u.domain
        if np.any(omega & ~d.interior) or np.any(omega & d.boundary):
            raise ValidationError("glue region must lie in the interior")
        inner = omega & ~ndimage.binary_erosion(omega, structure=np.ones((3,) * d.ndim, dtype=bool))
        excess = np.where(inner, v.values - u.values, -np.inf)
        i = int(np.argmax(excess))
        if excess.flat[i] > tol:
            z = d.points(d.multi_index(np.array([i])))[0]
            raise ValidationError(f"glue condition v <= u violated by {excess.flat[i]:.3g} at {tuple(np.round(z, 6))}")
        out = u.values.copy()
        out[omega] = np.maximum(u.values[omega], v.values[omega])
        return u.with_values(out)
    raise ValidationError(f"unknown combination {op!r}")


def regularized_max(u: GridField, v: GridField, eta: float) -> GridField:
    """Smoothed maximum: the average of max(u + s, v) over s uniform in [-eta, eta].

    Closed form ``v + q(u - v)`` with ``q(d) = (d + eta)^2 / (4 eta)`` on the
    band ``|d| < eta`` and ``max(d, 0)`` outside it.
    """
    if eta <= 0:
        raise ValidationError("eta must be positive")
    _same_domain(u, v)
    dlt = u.values - v.values
    q = np.where(dlt >= eta, dlt, np.where(dlt <= -eta, 0.0, (dlt + eta) ** 2 / (4 * eta)))
    return u.with_values(v.values + q)


# --------------------------------------------------------------------------
# mollification


def _rho_shape(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = t < 1
    ti = t[inside]
    out[inside] = np.exp(1.0 / (ti - 1.0)) / (1.0 - ti) ** 2
    return out


@lru_cache(maxsize=None)
def kernel_constant(n: int, nodes: int = 10_000) -> float:
    """C_n making rho(|z|^2) integrate to 1 over C^n (composite Simpson in the radius)."""
    if nodes % 2:
        nodes += 1
    r = np.linspace(0.0, 1.0, nodes + 1)
    w = np.ones(nodes + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    integral = (w * r ** (2 * n - 1) * _rho_shape(r * r)).sum() / (3.0 * nodes)
    sphere = 2.0 * math.pi ** n / math.factorial(n - 1)
    return 1.0 / (sphere * integral)


@dataclass(frozen=True)
class MollifierSpec:
    epsilon: float
    n: int

    @property
    def C_n(self) -> float:
        return kernel_constant(self.n)

    def kernel(self, h: float):
        """Offsets (in nodes) and raw weights C_n rho(|x|^2/eps^2) eps^{-2n} h^{2n}."""
        R = int(math.floor(self.epsilon / h))
        ax = np.arange(-R, R + 1)
        grids = np.meshgrid(*([ax] * (2 * self.n)), indexing="ij")
        r2 = sum(g.astype(float) ** 2 for g in grids) * h * h
        w = self.C_n * _rho_shape(r2 / self.epsilon ** 2) * (h / self.epsilon) ** (2 * self.n)
        return w


def restrict_domain(d: Domain, new_interior: np.ndarray) -> Domain:
    boundary = _dilate(new_interior, d.reach, d.kind == "reinhardt") & ~new_interior
    return Domain(d.shape, d.h, d.kind, d.lo_index, d.dims, new_interior, boundary, d.reach)


def mollify(f: GridField, spec: MollifierSpec) -> GridField:
    """Convolve with the radial bump kernel; defined on the eps-shrunken interior.

    Discrete weights are renormalized to sum 1, so constants are fixed.
    """
    d = f.domain
    if d.kind != "cartesian":
        raise ValidationError("mollification needs a cartesian grid")
    if spec.n != d.n:
        raise ValidationError("mollifier dimension does not match the domain")
    if spec.epsilon < 2 * d.h - 1e-12:
        raise ValidationError("epsilon must be at least 2h")
    w = spec.kernel(d.h)
    w = w / w.sum()
    support = w > 0
    valid = ndimage.binary_erosion(d.masked, structure=support, border_value=0)
    new_int = d.interior & ndimage.binary_erosion(valid, structure=np.ones((3,) * d.ndim, bool), border_value=0)
    if not new_int.any():
        raise ValidationError("epsilon too large: empty shrunken interior")
    filled = np.where(d.masked, f.values, 0.0)
    conv = ndimage.correlate(filled, w, mode="constant", cval=0.0)
    nd = restrict_domain(d, new_int)
    out = np.where(nd.masked, conv, np.nan)
    return GridField(nd, out, "computed")


def restrict_field(f: GridField, d: Domain) -> GridField:
    return GridField(d, np.where(d.masked, f.values, np.nan), f.provenance)
