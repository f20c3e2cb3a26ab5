"""Inclusion-exclusion box decomposition of lattice functions.

T_Q f = sum over Int(Q) of signed projected evaluations; the doubled-space
variant works on sampled (x-config, y-config) kernel phases and needs the
origin on the grid so all projected points land on grid points. Evaluation
points whose projections leave the grid or the valid mask come back NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .hamiltonian import GridSpec
from .interaction import InteractionSpec, SitePotentialSpec
from .kernel import KernelField, spectral_psi_field
from .lattice import Box, as_site_set, interior_boxes


# ---------------------------------------------------------------------------
# single-variable decomposition (functions of x only)


def t_q_single(f: Callable, Q: Box, sites: Sequence, x: np.ndarray) -> np.ndarray:
    """(T_Q f)(x) = sum_{Q' in Int(Q)} (-1)^{m(Q,Q')} [f(pi_{Q'} x) - f(0)].

    `f` maps config arrays (..., n_sites) to values (...); `x` is a batch
    of configs aligned with `sites` (sorted site tuples)."""
    sites = sorted(as_site_set(sites))
    x = np.asarray(x, dtype=float)
    zero = np.zeros(len(sites))
    f0 = np.asarray(f(zero))
    out = np.zeros(x.shape[:-1])
    for Qp, mcount in interior_boxes(Q):
        keep = np.array([Qp.contains_site(s) for s in sites])
        xp = np.where(keep, x, 0.0)
        out = out + (-1.0) ** mcount * (np.asarray(f(xp)) - f0)
    return out


def telescope_single(f: Callable, lam: Box, sites: Sequence, x: np.ndarray,
                     max_diam: int | None = None) -> np.ndarray:
    """sum_{Q subseteq lam} T_Q f, for checking f(x) - f(0) directly."""
    from .lattice import enumerate_boxes
    md = lam.diam if max_diam is None else max_diam
    out = np.zeros(np.asarray(x, dtype=float).shape[:-1])
    for Q in enumerate_boxes(lam, md):
        out = out + t_q_single(f, Q, sites, x)
    return out


# ---------------------------------------------------------------------------
# doubled-space decomposition on sampled kernel phases


@dataclass
class DecompositionTerm:
    """One T_Q psi field over (x-config, y-config) pairs (NaN off-domain)."""

    Q: Box
    values: np.ndarray
    sup_norm: float

    @property
    def diam(self) -> int:
        return self.Q.diam


def _digits_and_strides(grid: GridSpec, m: int):
    n = grid.n
    dim = n**m
    digits = np.stack(np.unravel_index(np.arange(dim), (n,) * m), axis=1)
    strides = np.array([n ** (m - 1 - k) for k in range(m)])
    return digits, strides


def gauge_field(psi: np.ndarray, grid: GridSpec, n_sites: int) -> np.ndarray:
    """psi(0, y - x) over (x-config, y-config) pairs; NaN where y - x is
    off the grid. The additive gauge of the decomposition."""
    c = grid.origin_index
    n = grid.n
    digits, strides = _digits_and_strides(grid, n_sites)
    off = digits[None, :, :] - digits[:, None, :] + c          # (N, N, m)
    ok = np.all((off >= 0) & (off < n), axis=2)
    offc = np.clip(off, 0, n - 1)
    j_idx = offc @ strides
    i_idx = np.full_like(j_idx, (c * strides).sum())
    vals = psi[i_idx, j_idx]
    return np.where(ok, vals, np.nan)


def t_q_doubled(psi: np.ndarray, grid: GridSpec, sites: Sequence,
                Q: Box) -> DecompositionTerm:
    """Doubled-projector decomposition term on a sampled psi(x, y) field.

    (T_Q psi)(x,y) = sum_{Q' in Int(Q)} (-1)^{m(Q,Q')}
                     [psi(Pi_{Q'}(x,y)) - psi(0, y-x)].
    """
    sites = sorted(as_site_set(sites))
    m = len(sites)
    if not grid.contains_origin:
        raise ValueError("grid must contain origin")
    c = grid.origin_index
    n = grid.n
    digits, strides = _digits_and_strides(grid, m)
    N = n**m
    gauge = gauge_field(psi, grid, m)

    I = digits[:, None, :]
    J = digits[None, :, :]
    off = J - I + c
    ok_off = (off >= 0) & (off < n)
    offc = np.clip(off, 0, n - 1)

    out = np.zeros((N, N))
    valid = np.ones((N, N), dtype=bool)
    for Qp, mcount in interior_boxes(Q):
        keep = np.array([Qp.contains_site(s) for s in sites])
        xi = np.where(keep[None, None, :], np.broadcast_to(I, off.shape), c)
        yi = np.where(keep[None, None, :], np.broadcast_to(J, off.shape), offc)
        valid &= np.all(np.where(keep[None, None, :], True, ok_off), axis=2)
        ii = xi @ strides
        jj = yi @ strides
        out = out + (-1.0) ** mcount * (psi[ii, jj] - gauge)
    out = np.where(valid, out, np.nan)
    sup = float(np.nanmax(np.abs(out))) if not np.all(np.isnan(out)) else math.nan
    return DecompositionTerm(Q=Q, values=out, sup_norm=sup)


def all_terms(psi: np.ndarray, grid: GridSpec, sites: Sequence,
              max_diam: int | None = None) -> dict:
    """T_Q psi for every box Q inside the bounding box of `sites` (up to
    max_diam), keyed by box."""
    from .lattice import enumerate_boxes
    sites = sorted(as_site_set(sites))
    lo = tuple(min(s[k] for s in sites) for k in range(len(sites[0])))
    hi = tuple(max(s[k] for s in sites) for k in range(len(sites[0])))
    lam = Box(lo, hi)
    md = lam.diam if max_diam is None else max_diam
    site_set = set(sites)
    out = {}
    for Q in enumerate_boxes(lam, md):
        if not all(s in site_set for s in Q.sites()):
            continue
        out[Q] = t_q_doubled(psi, grid, sites, Q)
    return out


def telescope_doubled(terms: dict, psi: np.ndarray, grid: GridSpec,
                      sites: Sequence) -> float:
    """Max defect of psi(x,y) - psi(0,y-x) = sum_Q T_Q psi over the joint
    valid domain."""
    sites = sorted(as_site_set(sites))
    total = None
    for term in terms.values():
        total = term.values.copy() if total is None else total + term.values
    lhs = psi - gauge_field(psi, grid, len(sites))
    diff = np.abs(lhs - total)
    if np.all(np.isnan(diff)):
        raise ValueError("empty joint domain")
    return float(np.nanmax(diff))


# ---------------------------------------------------------------------------
# segment averages


def segment_average(site: SitePotentialSpec, x, y, order: int = 64):
    """Mean of the single-site well along the segment from y to x:
    integral_0^1 A(y + theta (x - y)) dtheta (Gauss-Legendre)."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    theta = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for th, ww in zip(theta, w):
        out = out + ww * site.value(y + th * (x - y))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# decay profile and splitting comparison


def decay_profile(terms: dict | list, eps: float, t: float, d: int) -> list:
    """Per-diameter decay table: rows (diam, sup_norm, normalized, count)
    with normalized = sup / (t * eps^diam * (1 + diam)^{2d})."""
    if isinstance(terms, dict):
        terms = list(terms.values())
    by_diam: dict = {}
    for term in terms:
        by_diam.setdefault(term.diam, []).append(term)
    rows = []
    for diam in sorted(by_diam):
        sup = max(tm.sup_norm for tm in by_diam[diam])
        norm = sup / (t * eps**diam * (1.0 + diam) ** (2 * d))
        rows.append({"diam": diam, "sup_norm": sup, "normalized": norm,
                     "boxes_counted": len(by_diam[diam])})
    return rows


@dataclass
class SplittingResult:
    defect: float
    reference_scale: float
    t: float
    h: float
    n_removed: int


def splitting_check(spec: InteractionSpec, lam, E, grid: GridSpec, t: float,
                    mask_mode: str = "continuum",
                    kinetic: str = "sine_dvr") -> SplittingResult:
    """Sup over the joint window of
    |psi_Lambda - t sum_{lam in E} A-segment-average - psi_{Lambda minus E}|,
    with psi_{Lambda minus E} from a fresh spectral run on the sub-lattice.
    Returned with the reference scale |E| (t + h^2 t^2)."""
    lam_sites = sorted(as_site_set(lam))
    e_sites = sorted(as_site_set(E))
    if not set(e_sites) <= set(lam_sites):
        raise ValueError("E must be contained in Lambda")
    rest = sorted(set(lam_sites) - set(e_sites))
    h = spec.h
    m = len(lam_sites)
    n = grid.n

    kf = spectral_psi_field(spec, lam_sites, grid, t, kinetic=kinetic,
                            mask_mode=mask_mode)
    psi = kf.psi

    # t * sum over E of the one-site segment average, on the (x,y) grid
    x = grid.x
    seg1 = segment_average(spec.site, x[:, None], x[None, :])  # (n, n)
    digits, _ = _digits_and_strides(grid, m)
    seg_total = np.zeros((kf.dim, kf.dim))
    for i_site, s in enumerate(lam_sites):
        if s in e_sites:
            seg_total += seg1[np.ix_(digits[:, i_site], digits[:, i_site])]

    if rest:
        kf_rest = spectral_psi_field(spec, rest, grid, t, kinetic=kinetic,
                                     mask_mode=mask_mode)
        rest_pos = [lam_sites.index(s) for s in rest]
        strides_rest = np.array([n ** (len(rest) - 1 - k) for k in range(len(rest))])
        sub_idx = digits[:, rest_pos] @ strides_rest
        psi_rest = kf_rest.psi[np.ix_(sub_idx, sub_idx)]
    else:
        psi_rest = 0.0

    diff = np.abs(psi - t * seg_total - psi_rest)
    if np.all(np.isnan(diff)):
        raise ValueError("empty joint domain")
    defect = float(np.nanmax(diff))
    scale = len(e_sites) * (t + h * h * t * t)
    return SplittingResult(defect=defect, reference_scale=scale, t=t, h=h,
                           n_removed=len(e_sites))
