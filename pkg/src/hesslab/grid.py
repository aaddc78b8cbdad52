"""Gridded domains in C^n and sampled fields.

Two grid kinds are supported.  ``cartesian`` grids are uniform in all 2n real
coordinates, ordered ``(x_1, y_1, ..., x_n, y_n)``.  ``reinhardt`` grids sample
torus-invariant data on the moduli ``(|z_1|, ..., |z_n|)``, with index 0 at
modulus 0 and mirror symmetry across it; they carry the same information as a
cartesian grid for functions depending only on the moduli.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .cone_algebra import ValidationError

SENTINEL = -1e12
SENTINEL_CUTOFF = -1e6
GEOM_EPS = 1e-9
CHUNK = 1 << 20


class DomainError(ValidationError):
    pass


# --------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Shape:
    shape_id: str
    n: int
    params: dict = field(default_factory=dict, hash=False, compare=False)
    parts: tuple = ()

    @property
    def reinhardt(self) -> bool:
        if self.shape_id in ("product", "intersection"):
            return all(p.reinhardt for p in self.parts)
        if self.shape_id == "ball":
            return not np.any(np.asarray(self.params.get("center", 0.0)))
        return self.shape_id in ("polydisc", "hartogs_triangle", "reinhardt")

    def contains(self, z: np.ndarray) -> np.ndarray:
        """Open-set membership for complex points shaped (..., n)."""
        p = self.params
        a = np.abs(z)
        if self.shape_id == "ball":
            c = np.broadcast_to(np.asarray(p.get("center", 0.0), dtype=complex), (self.n,))
            return np.sum(np.abs(z - c) ** 2, axis=-1) < p.get("radius", 1.0) ** 2 - GEOM_EPS
        if self.shape_id == "polydisc":
            r = np.broadcast_to(np.asarray(p.get("radii", 1.0), dtype=float), (self.n,))
            return np.all(a < r - GEOM_EPS, axis=-1)
        if self.shape_id == "hartogs_triangle":
            return (a[..., 0] < a[..., 1] - GEOM_EPS) & (a[..., 1] < 1.0 - GEOM_EPS)
        if self.shape_id == "reinhardt":
            k = p["k"]
            phi = np.sum(a[..., :-1] ** 2, axis=-1) + (1.0 - self.n / k) * a[..., -1] ** 2
            return np.all(a < 1.0 - GEOM_EPS, axis=-1) & (phi < 1.0 - GEOM_EPS)
        if self.shape_id == "box":
            half = np.broadcast_to(np.asarray(p.get("half", 1.0), dtype=float), (2 * self.n,))
            re = np.stack([z.real, z.imag], axis=-1).reshape(z.shape[:-1] + (2 * self.n,))
            return np.all(np.abs(re) < half - GEOM_EPS, axis=-1)
        if self.shape_id == "product":
            n1 = self.parts[0].n
            return self.parts[0].contains(z[..., :n1]) & self.parts[1].contains(z[..., n1:])
        if self.shape_id == "intersection":
            return self.parts[0].contains(z) & self.parts[1].contains(z)
        raise DomainError(f"unknown shape {self.shape_id!r}")

    def extent(self) -> list:
        """(lo, hi) per real axis for cartesian grids."""
        p = self.params
        if self.shape_id == "ball":
            r = p.get("radius", 1.0)
            c = np.broadcast_to(np.asarray(p.get("center", 0.0), dtype=complex), (self.n,))
            out = []
            for cj in c:
                out += [(cj.real - r, cj.real + r), (cj.imag - r, cj.imag + r)]
            return out
        if self.shape_id == "polydisc":
            r = np.broadcast_to(np.asarray(p.get("radii", 1.0), dtype=float), (self.n,))
            return [(-rj, rj) for rj in r for _ in range(2)]
        if self.shape_id in ("hartogs_triangle", "reinhardt"):
            return [(-1.0, 1.0)] * (2 * self.n)
        if self.shape_id == "box":
            half = np.broadcast_to(np.asarray(p.get("half", 1.0), dtype=float), (2 * self.n,))
            return [(-x, x) for x in half]
        if self.shape_id == "product":
            return self.parts[0].extent() + self.parts[1].extent()
        if self.shape_id == "intersection":
            e1, e2 = self.parts[0].extent(), self.parts[1].extent()
            return [(max(a[0], b[0]), min(a[1], b[1])) for a, b in zip(e1, e2)]
        raise DomainError(f"unknown shape {self.shape_id!r}")

    def moduli_extent(self) -> list:
        ext = self.extent()
        return [max(abs(ext[2 * j][0]), abs(ext[2 * j][1]), abs(ext[2 * j + 1][0]), abs(ext[2 * j + 1][1]))
                for j in range(self.n)]

    def describe(self) -> str:
        if self.parts:
            return f"{self.shape_id}({self.parts[0].describe()},{self.parts[1].describe()})"
        items = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.shape_id}[n={self.n}{',' if items else ''}{items}]"


def make_shape(shape_id: str, params: dict | None = None) -> Shape:
    params = dict(params or {})
    if shape_id == "disc":
        shape_id, params = "ball", {**params, "n": 1}
    if shape_id in ("product", "intersection"):
        parts = tuple(p if isinstance(p, Shape) else make_shape(*p) for p in (params["first"], params["second"]))
        if shape_id == "product":
            n = parts[0].n + parts[1].n
        else:
            if parts[0].n != parts[1].n:
                raise DomainError("intersection of domains of different dimension")
            n = parts[0].n
        return Shape(shape_id, n, {}, parts)
    if shape_id == "hartogs_triangle":
        return Shape(shape_id, 2, {})
    if shape_id == "reinhardt":
        n, k = int(params.get("n", 3)), int(params["k"])
        if not 1 <= k <= n:
            raise DomainError(f"reinhardt needs 1 <= k <= n, got k={k}, n={n}")
        return Shape(shape_id, n, {"k": k})
    if shape_id in ("ball", "polydisc", "box"):
        n = int(params.pop("n", 1))
        if shape_id == "ball" and params.get("radius", 1.0) <= 0:
            raise DomainError("radius must be positive")
        return Shape(shape_id, n, params)
    raise DomainError(f"unknown shape {shape_id!r}")


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class Domain:
    shape: Shape
    h: float
    kind: str
    lo_index: np.ndarray
    dims: tuple
    interior: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    reach: int = 1

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def shape_id(self) -> str:
        return self.shape.shape_id

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def __post_init__(self):
        object.__setattr__(self, "_masked", None)

    @property
    def masked(self) -> np.ndarray:
        if self._masked is None:
            object.__setattr__(self, "_masked", self.interior | self.boundary)
        return self._masked

    def coords(self, axis: int) -> np.ndarray:
        return (self.lo_index[axis] + np.arange(self.dims[axis])) * self.h

    def points(self, multi: np.ndarray) -> np.ndarray:
        """Complex coordinates (k, n) of grid multi-indices (k, ndim)."""
        x = (np.asarray(multi) + self.lo_index) * self.h
        if self.kind == "reinhardt":
            return x.astype(complex)
        return x[:, 0::2] + 1j * x[:, 1::2]

    def slab_points(self, i0: int, i1: int, mask: np.ndarray | None = None) -> np.ndarray:
        """Complex coordinates of the slab ``[i0:i1]`` along axis 0.

        With ``mask`` (shaped like the slab) only the selected nodes are
        returned, as a (k, n) array; otherwise the full slab shape plus a
        trailing axis of length n.
        """
        if mask is not None:
            idx = np.nonzero(mask)
            x = [(idx[a] + self.lo_index[a] + (i0 if a == 0 else 0)) * self.h for a in range(self.ndim)]
            if self.kind == "reinhardt":
                return np.stack(x, axis=-1).astype(complex)
            return np.stack([x[2 * j] + 1j * x[2 * j + 1] for j in range(self.n)], axis=-1)
        shape = (i1 - i0,) + tuple(self.dims[1:])
        axes = []
        for a in range(self.ndim):
            c = self.coords(a)[i0:i1] if a == 0 else self.coords(a)
            sh = [1] * self.ndim
            sh[a] = len(c)
            axes.append(c.reshape(sh))
        out = np.empty(shape + (self.n,), dtype=complex)
        for j in range(self.n):
            if self.kind == "reinhardt":
                out[..., j] = axes[j]
            else:
                out[..., j] = axes[2 * j] + 1j * axes[2 * j + 1]
        return out

    def slab_moduli(self, i0: int, i1: int) -> np.ndarray:
        """Moduli |z_j| over the slab, shape (slab..., n), float."""
        if self.kind == "reinhardt":
            return self.slab_points(i0, i1).real
        shape = (i1 - i0,) + tuple(self.dims[1:])
        out = np.empty(shape + (self.n,))
        for j in range(self.n):
            x, y = self.coords(2 * j), self.coords(2 * j + 1)
            if j == 0:
                x = x[i0:i1]
            sx = [1] * self.ndim
            sy = [1] * self.ndim
            sx[2 * j], sy[2 * j + 1] = len(x), len(y)
            out[..., j] = np.hypot(x.reshape(sx), y.reshape(sy))
        return out

    def slabs(self):
        per = max(1, CHUNK // max(1, int(np.prod(self.dims[1:]))))
        for i0 in range(0, self.dims[0], per):
            yield i0, min(self.dims[0], i0 + per)

    def multi_index(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(flat, self.dims), axis=-1)

    def flat_index(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.dims)

    def node_of(self, z) -> int:
        """Flat index of the grid node nearest to the complex point z."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.kind == "reinhardt":
            x = np.abs(z)
        else:
            x = np.stack([z.real, z.imag], axis=-1).ravel()
        idx = np.rint(x / self.h).astype(int) - self.lo_index
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            raise DomainError(f"point {z} outside the grid")
        return int(np.ravel_multi_index(tuple(idx), self.dims))

    def volume_weights(self, multi: np.ndarray) -> np.ndarray:
        """Lebesgue volume of the grid cell of each node."""
        if self.kind == "cartesian":
            return np.full(len(multi), self.h ** self.ndim)
        r = (np.asarray(multi) + self.lo_index) * self.h
        w = np.where(r > 0, 2.0 * np.pi * r * self.h, np.pi * self.h ** 2 / 4.0)
        return np.prod(w, axis=-1)

    def distance_to_exterior(self) -> np.ndarray:
        """Euclidean distance (in C^n units) from each node to the nearest non-interior node.

        Float32; cached.
        """
        if getattr(self, "_dist", None) is None:
            if self.kind == "reinhardt":
                pad = [x - 1 for x in self.dims]
                m = np.pad(self.interior, [(p, 0) for p in pad], mode="reflect")
                d = np.sqrt(edt_squared(m))[tuple(slice(p, None) for p in pad)]
            else:
                d = np.sqrt(edt_squared(self.interior))
            d *= np.float32(self.h)
            object.__setattr__(self, "_dist", d)
        return self._dist

    def checksum(self) -> str:
        dig = hashlib.sha256()
        dig.update(np.packbits(self.interior).tobytes())
        dig.update(np.packbits(self.boundary).tobytes())
        return dig.hexdigest()[:16]

    def refine(self, factor: int = 2) -> "Domain":
        return make_domain(self.shape, h=self.h / factor, kind=self.kind, reach=self.reach)

    def describe(self) -> str:
        return f"{self.shape.describe()} kind={self.kind} h={self.h:g}"


@numba.njit(cache=True)
def _edt_lines(f):
    """In-place 1-D squared distance transform of each row (lower envelope of parabolas)."""
    rows, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    d = np.empty(n, dtype=np.float32)
    big = 1e20
    for r in range(rows):
        nonzero = False
        for q in range(n):
            if f[r, q] != 0.0:
                nonzero = True
                break
        if not nonzero:
            continue
        k = 0
        first = -1
        for q in range(n):
            if f[r, q] < big:
                first = q
                break
        if first < 0:
            continue
        v[0] = first
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(first + 1, n):
            fq = f[r, q]
            if fq >= big:
                continue
            while True:
                p = v[k]
                s = ((fq + q * q) - (f[r, p] + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s if k > 0 else -np.inf
            z[k + 1] = np.inf
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            p = v[k]
            d[q] = (q - p) * (q - p) + f[r, p]
        for q in range(n):
            f[r, q] = d[q]


def edt_squared(inside: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (in nodes) to the nearest False node.

    Separable transform in float32, one axis at a time, so peak memory stays
    near two copies of the grid.  The first axis is a plain two-way scan.
    """
    far = np.float32(1e30)
    f = np.empty(inside.shape, dtype=np.float32)
    run = np.full(inside.shape[1:], far, dtype=np.float32)
    for i in range(inside.shape[0]):
        run = np.where(inside[i], run + 1, 0).astype(np.float32)
        f[i] = run
    run[...] = far
    for i in range(inside.shape[0] - 1, -1, -1):
        run = np.where(inside[i], run + 1, 0).astype(np.float32)
        f[i] = np.minimum(f[i], run)
    f = np.where(f >= far / 2, far, np.minimum(f, np.float32(1e15)) ** 2)
    for axis in range(1, f.ndim):
        moved = np.moveaxis(f, axis, -1)
        if axis == f.ndim - 1:
            _edt_lines(f.reshape(-1, f.shape[axis]))
            continue
        lines = np.ascontiguousarray(moved).reshape(-1, f.shape[axis])
        _edt_lines(lines)
        moved[...] = lines.reshape(moved.shape)
        del lines
    return f


def _dilate(mask: np.ndarray, reach: int, mirror_low: bool) -> np.ndarray:
    out = mask.copy()
    for axis in range(mask.ndim):
        src = out.copy()
        for s in range(1, reach + 1):
            lo = [slice(None)] * mask.ndim
            hi = [slice(None)] * mask.ndim
            lo[axis], hi[axis] = slice(0, -s), slice(s, None)
            out[tuple(lo)] |= src[tuple(hi)]
            out[tuple(hi)] |= src[tuple(lo)]
            if mirror_low:
                # node i mirrors to -i, so index s-i is also a neighbour
                for i in range(0, s):
                    a = [slice(None)] * mask.ndim
                    b = [slice(None)] * mask.ndim
                    a[axis], b[axis] = i, s - i
                    out[tuple(a)] |= src[tuple(b)]
    return out


def make_domain(shape, params: dict | None = None, h: float = 0.1, kind: str = "cartesian",
                reach: int = 1, check_connected: bool = True) -> Domain:
    """Rasterize a catalogued shape on a uniform grid of spacing ``h``.

    ``reach`` is the width of the boundary ring, i.e. the largest stencil
    offset (in nodes) that interior points may use.
    """
    if h <= 0:
        raise DomainError("spacing must be positive")
    if not isinstance(shape, Shape):
        shape = make_shape(shape, params)
    if kind == "reinhardt":
        if not shape.reinhardt:
            raise DomainError(f"{shape.describe()} is not a Reinhardt domain")
        hi = shape.moduli_extent()
        lo_index = np.zeros(shape.n, dtype=int)
        dims = tuple(int(math.ceil(r / h - 1e-9)) + reach + 1 for r in hi)
    elif kind == "cartesian":
        ext = shape.extent()
        lo_index = np.array([int(math.floor(lo / h + 1e-9)) - reach for lo, _ in ext])
        dims = tuple(int(math.ceil(hi_ / h - 1e-9)) + reach - li + 1 for (_, hi_), li in zip(ext, lo_index))
    else:
        raise DomainError(f"unknown grid kind {kind!r}")
    dims = tuple(int(x) for x in dims)
    if min(dims) <= 2 * reach:
        raise DomainError("empty interior")
    stub = Domain(shape, h, kind, lo_index, dims, np.zeros(0, bool), np.zeros(0, bool), reach)
    interior = np.zeros(dims, dtype=bool)
    for i0, i1 in stub.slabs():
        pts = stub.slab_moduli(i0, i1) if shape.reinhardt else stub.slab_points(i0, i1)
        interior[i0:i1] = shape.contains(pts)
    # the outermost `reach` layers must stay outside the interior
    edge = np.zeros(dims, dtype=bool)
    for axis in range(len(dims)):
        sl = [slice(None)] * len(dims)
        sl[axis] = slice(dims[axis] - reach, None)
        edge[tuple(sl)] = True
        if kind == "cartesian":
            sl[axis] = slice(0, reach)
            edge[tuple(sl)] = True
    if np.any(interior & edge):
        raise DomainError("interior touches the grid edge")
    if not interior.any():
        raise DomainError("empty interior")
    if check_connected:
        _, count = ndimage.label(interior)
        if count != 1:
            raise DomainError(f"interior has {count} connected components")
    boundary = _dilate(interior, reach, kind == "reinhardt") & ~interior
    return Domain(shape, h, kind, lo_index, dims, interior, boundary, reach)


# --------------------------------------------------------------------------
# closed forms and fields


@dataclass(frozen=True)
class ClosedForm:
    """A function on C^n given by formula.

    ids: sq_norm, hartogs_exh, phi_k(k), log_abs_coord(j), abs_coord(j),
    hermitian_quadratic(A, c), constant(c), re_linear(a), re_square(j),
    affine(terms, c) with terms = ((coef, ClosedForm), ...), max_of(forms, c).
    """

    form_id: str
    params: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def invariant(self) -> bool:
        """Torus invariance (depends only on the moduli)."""
        if self.form_id in ("re_linear", "re_square"):
            return False
        if self.form_id == "hermitian_quadratic":
            a = np.asarray(self.params["A"])
            return bool(np.allclose(a, np.diag(np.diag(a))))
        if self.form_id in ("affine", "max_of"):
            terms = self.params["terms"] if self.form_id == "affine" else [(1, f) for f in self.params["forms"]]
            return all(f.invariant for _, f in terms)
        return True

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        p = self.params
        fid = self.form_id
        if fid == "sq_norm":
            return np.sum(np.abs(z) ** 2, axis=-1)
        if fid == "constant":
            return np.full(z.shape[:-1], float(p.get("c", 0.0)))
        if fid == "hartogs_exh":
            a = np.abs(z)
            with np.errstate(divide="ignore"):
                lg = np.where(a[..., 1] > 0, np.log(np.where(a[..., 1] > 0, a[..., 1], 1.0)), -np.inf)
            return np.maximum(lg, a[..., 0] ** 2 - a[..., 1] ** 2)
        if fid == "phi_k":
            k = p["k"]
            n = z.shape[-1]
            a2 = np.abs(z) ** 2
            return np.sum(a2[..., :-1], axis=-1) + (1.0 - n / k) * a2[..., -1]
        if fid == "log_abs_coord":
            a = np.abs(z[..., p["j"]])
            with np.errstate(divide="ignore"):
                return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), SENTINEL)
        if fid == "abs_coord":
            return np.abs(z[..., p["j"]])
        if fid == "hermitian_quadratic":
            a = np.asarray(p["A"], dtype=complex)
            q = np.einsum("...j,jk,...k->...", z, a, z.conj()).real
            return q + float(p.get("c", 0.0))
        if fid == "re_linear":
            a = np.asarray(p["a"], dtype=complex)
            return (z @ a).real + float(p.get("c", 0.0))
        if fid == "re_square":
            return (z[..., p["j"]] ** 2).real
        if fid == "affine":
            out = np.full(z.shape[:-1], float(p.get("c", 0.0)))
            for coef, f in p["terms"]:
                out = out + coef * f(z)
            return out
        if fid == "max_of":
            vals = [f(z) for f in p["forms"]]
            return np.maximum.reduce(vals) + float(p.get("c", 0.0))
        raise ValidationError(f"unknown closed form {fid!r}")

    def describe(self) -> str:
        if self.form_id == "affine":
            inner = "+".join(f"{c:g}*{f.describe()}" for c, f in self.params["terms"])
            return f"affine({inner},{self.params.get('c', 0.0):g})"
        if self.form_id == "max_of":
            return "max(" + ",".join(f.describe() for f in self.params["forms"]) + ")"
        items = ",".join(f"{k}={np.asarray(v).tolist()}" for k, v in sorted(self.params.items()))
        return f"{self.form_id}({items})"


def sq_norm() -> ClosedForm:
    return ClosedForm("sq_norm")


def constant(c: float) -> ClosedForm:
    return ClosedForm("constant", {"c": c})


def phi_k(k: int) -> ClosedForm:
    return ClosedForm("phi_k", {"k": k})


def hartogs_exh() -> ClosedForm:
    return ClosedForm("hartogs_exh")


def hermitian_quadratic(a, c: float = 0.0) -> ClosedForm:
    """``sum_jk a_jk z_j conj(z_k) + c``; its complex Hessian is ``a`` itself."""
    return ClosedForm("hermitian_quadratic", {"A": np.asarray(a, dtype=complex), "c": c})


def affine(terms, c: float = 0.0) -> ClosedForm:
    return ClosedForm("affine", {"terms": tuple(terms), "c": c})


def max_of(forms, c: float = 0.0) -> ClosedForm:
    return ClosedForm("max_of", {"forms": tuple(forms), "c": c})


@dataclass(eq=False)
class GridField:
    domain: Domain
    values: np.ndarray = field(repr=False)
    provenance: str = "computed"

    def __post_init__(self):
        if self.values.shape != self.domain.dims:
            raise ValidationError(f"values shape {self.values.shape} != grid {self.domain.dims}")

    def at(self, z) -> float:
        return float(self.values.flat[self.domain.node_of(z)])

    def masked_values(self) -> np.ndarray:
        return self.values[self.domain.masked]

    def interior_values(self) -> np.ndarray:
        return self.values[self.domain.interior]

    def check(self):
        v = self.masked_values()
        if not np.all(np.isfinite(v)):
            raise ValidationError("field has non-finite values on the masked nodes")
        return self

    def with_values(self, values, provenance="computed") -> "GridField":
        return GridField(self.domain, values, provenance)

    def __add__(self, other):
        if isinstance(other, GridField):
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + float(other))

    def __sub__(self, other):
        if isinstance(other, GridField):
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - float(other))

    def __mul__(self, s):
        return self.with_values(self.values * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def eval_closed_form(cf: ClosedForm, domain: Domain) -> GridField:
    """Evaluate a closed form on the interior and boundary nodes (NaN elsewhere)."""
    if domain.kind == "reinhardt" and not cf.invariant:
        raise ValidationError(f"{cf.describe()} is not torus invariant")
    values = np.full(domain.dims, np.nan)
    masked = domain.masked
    for i0, i1 in domain.slabs():
        m = masked[i0:i1]
        if not m.any():
            continue
        slab = values[i0:i1]
        slab[m] = cf(domain.slab_points(i0, i1, m))
    return GridField(domain, values, cf.describe())


def field_from_function(func, domain: Domain, provenance: str = "computed") -> GridField:
    """Field from a vectorized callable on complex points (k, n)."""
    values = np.full(domain.dims, np.nan)
    masked = domain.masked
    for i0, i1 in domain.slabs():
        m = masked[i0:i1]
        if not m.any():
            continue
        slab = values[i0:i1]
        slab[m] = func(domain.slab_points(i0, i1, m))
    return GridField(domain, values, provenance)


def dump_field(f: GridField) -> str:
    """Text dump: header line plus row-major masked values (17 significant digits)."""
    d = f.domain
    head = (f"field shape_id={d.shape.describe()} kind={d.kind} n={d.n} h={d.h:.17g} "
            f"dims={'x'.join(map(str, d.dims))} lo={','.join(map(str, d.lo_index))} "
            f"masks={d.checksum()} provenance={f.provenance.replace(' ', '_')}")
    flat = np.flatnonzero(d.masked.ravel())
    lines = [head] + [f"{i} {f.values.flat[i]:.17g}" for i in flat]
    return "\n".join(lines) + "\n"


def load_field(text: str, domain: Domain) -> GridField:
    lines = text.strip().splitlines()
    head = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    if head["masks"] != domain.checksum():
        raise ValidationError("mask checksum mismatch")
    values = np.full(domain.dims, np.nan)
    for line in lines[1:]:
        i, v = line.split()
        values.flat[int(i)] = float(v)
    return GridField(domain, values, head.get("provenance", "computed"))
