"""Discrete m-Hessian measures and membership in the finite-energy class.

Densities are normalized so that ``|z|^2`` has density 1; masses integrate
them against the Lebesgue volume of the grid cells.  Under the convention
``d^c = i(dbar - d)`` the top power ``beta^n`` equals ``4^n n!`` times the
Lebesgue volume form; that factor is applied only in report footers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cone_algebra import ValidationError
from .fields import _all_hessians, crease_axes, exhaustion_report, msh_report, one_sided_hessians
from .grid import GridField


def lebesgue_to_beta(n: int) -> float:
    return 4.0 ** n * math.factorial(n)


@dataclass
class MeasureDensity:
    source: GridField = field(repr=False)
    m: int
    density: np.ndarray = field(repr=False)
    total_mass: float
    excluded: int
    creases: int

    @property
    def domain(self):
        return self.source.domain

    def footer(self) -> str:
        c = lebesgue_to_beta(self.domain.n)
        return f"# mass in Lebesgue units; multiply by {c:g} for beta^n units"


def _density_values(H: np.ndarray, m: int, n: int) -> np.ndarray:
    lam = np.linalg.eigvalsh(H)
    from .cone_algebra import sigma_all
    return sigma_all(lam, m)[:, m - 1] / math.comb(n, m)


def hessian_density(f: GridField, m: int, creases: bool = True) -> MeasureDensity:
    """Pointwise sigma_m(lambda(H))/C(n, m).

    At detected max-creases the centred stencil straddles the kink, so the
    minimum over the crease-free shifted Hessians is used instead; nodes
    without such a candidate keep the centred value.
    """
    d = f.domain
    if not 1 <= m <= d.n:
        raise ValidationError(f"m={m} out of range for n={d.n}")
    dens = np.full(d.dims, np.nan)
    excluded = n_crease = 0
    for flat, H, ok in _all_hessians(f, False):
        excluded += int((~ok).sum())
        flat, H = flat[ok], H[ok]
        vals = _density_values(H, m, d.n)
        if creases and len(flat):
            multi = d.multi_index(flat)
            axes = crease_axes(f, multi)
            hit = np.flatnonzero(axes.any(axis=1))
            n_crease += len(hit)
            owner, Ha = one_sided_hessians(f, multi[hit], axes[hit])
            if len(owner):
                low = np.full(len(hit), np.inf)
                np.minimum.at(low, owner, _density_values(Ha, m, d.n))
                # the centred stencil straddles the crease; trust the clean ones
                has = np.isfinite(low)
                vals[hit[has]] = low[has]
        dens.ravel()[flat] = vals
    mass = _integrate(d, dens, None)
    return MeasureDensity(f, m, dens, mass, excluded, n_crease)


def _integrate(d, dens, region) -> float:
    sel = np.isfinite(dens) & d.interior
    if region is not None:
        sel &= region
    flat = np.flatnonzero(sel.ravel())
    w = d.volume_weights(d.multi_index(flat))
    return float(np.sum(dens.ravel()[flat] * w))


def total_mass(md: MeasureDensity, region: np.ndarray | None = None) -> float:
    """Riemann sum of the density against the Lebesgue cell volumes."""
    if region is not None and np.any(region & ~md.domain.interior):
        raise ValidationError("region must lie in the interior")
    if region is None:
        return md.total_mass
    return _integrate(md.domain, md.density, region)


def mass_error_estimate(md: MeasureDensity) -> float:
    """Mass carried by the cells next to the boundary, a first-order error bound."""
    d = md.domain
    band = d.interior & (d.distance_to_exterior() <= 1.5 * d.h)
    return abs(_integrate(d, np.abs(md.density), band))


def e0_membership(f: GridField, m: int, tol: float = 1e-9, band_C: float = 4.0) -> dict:
    """Itemized check of nonpositivity, zero boundary limit, boundedness,
    m-subharmonicity and finite Hessian mass.

    The m-subharmonicity item accepts the FD test or, failing that, the
    solver's scheme certificate.
    """
    d = f.domain
    vals = f.values[d.masked]
    items = {}
    items["nonpositive"] = bool(np.nanmax(f.values[d.interior]) <= tol)
    ex = exhaustion_report(f, band_tol=band_C * d.h)
    items["boundary_limit"] = bool(ex.band_sup >= -band_C * d.h)
    items["bounded"] = bool(np.all(np.isfinite(vals)) and vals.min() > -1e6)
    rep = msh_report(f, m, detail=False)
    items["msh"] = bool(rep.passed)
    scheme = None
    if not rep.passed:
        # envelope-built fields are certified by the solver's monotone scheme
        from .envelopes import scheme_certificate
        try:
            scheme = scheme_certificate(f, m)
        except ValidationError:
            scheme = {"passed": False}
        items["msh"] = bool(scheme["passed"])
    mass = hessian_density(f, m).total_mass if items["bounded"] else math.inf
    items["finite_mass"] = bool(np.isfinite(mass))
    return {"passed": all(items.values()), "items": items, "band_sup": ex.band_sup,
            "worst_margin": rep.worst_margin, "scheme": scheme, "mass": mass}
