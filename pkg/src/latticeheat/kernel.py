"""Heat-kernel fields and the phase-function engine.

The central object is the factorization

    U(x, y, t) = (2 pi t h^2)^(-|Lambda|/2) exp(-|x-y|^2 / (2 t h^2)) exp(-psi)

sampled on the tensor-product grid. `extract_psi` inverts it on the valid
mask; `duhamel_solve` reconstructs psi independently by the fixed-point
iteration for the gradient system driven by the explicit drift-Gaussian
propagator, giving a dual route against the spectral kernel.

Masking: the kernel underflows far off-diagonal, and float64 eigensolves
carry an absolute noise floor around 1e-16 of the kernel peak, so values
below `rel_floor * max(U)` (default 1e-8) carry no extractable phase and
are masked out along with the literal underflow floor and the interior
window. NaN is used as the mask sentinel so finite differences propagate
invalidity automatically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .hamiltonian import (FactoredHamiltonian, GridSpec, LatticeOperator,
                          build_hamiltonian, heat_operator)
from .interaction import InteractionSpec
from .lattice import as_site_set, pairwise_max_dist

UNDERFLOW_FLOOR = 1e-290
DEFAULT_REL_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# kernel fields


@dataclass
class KernelField:
    """Sampled kernel U over (x-config, y-config) index pairs, with the
    extracted phase psi (NaN off the valid mask) and grid metadata."""

    U: np.ndarray
    t: float
    h: float
    grid: GridSpec
    sites: tuple
    psi: np.ndarray | None = None
    mask: np.ndarray | None = None
    kinetic: str = "sine_dvr"

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    @property
    def tensor_shape(self) -> tuple:
        return (self.grid.n,) * (2 * self.n_sites)

    def digits(self) -> np.ndarray:
        """(dim, n_sites) per-site grid indices of each flat config index."""
        return np.stack(np.unravel_index(np.arange(self.dim),
                                         (self.grid.n,) * self.n_sites), axis=1)

    def window_config_mask(self) -> np.ndarray:
        """(dim,) configs whose every per-site index is in the window."""
        w = self.grid.window
        return np.all(w[self.digits()], axis=1)

    def psi_tensor(self) -> np.ndarray:
        if self.psi is None:
            raise ValueError("psi not extracted yet")
        return self.psi.reshape(self.tensor_shape)


def config_sqdist(grid: GridSpec, n_sites: int) -> np.ndarray:
    """|x - y|^2 over (x-config, y-config) pairs."""
    x = grid.x
    sq = (x[:, None] - x[None, :]) ** 2
    dim = grid.n**n_sites
    dig = np.stack(np.unravel_index(np.arange(dim), (grid.n,) * n_sites), axis=1)
    out = np.zeros((dim, dim))
    for lam in range(n_sites):
        out += sq[np.ix_(dig[:, lam], dig[:, lam])]
    return out


def free_kernel_matrix(grid: GridSpec, n_sites: int, t: float, h: float) -> np.ndarray:
    """Analytic free kernel (2 pi t h^2)^{-m/2} exp(-|x-y|^2/(2 t h^2))."""
    pref = (2.0 * np.pi * t * h * h) ** (-0.5 * n_sites)
    return pref * np.exp(-config_sqdist(grid, n_sites) / (2.0 * t * h * h))


def kernel_from_operator(op: LatticeOperator, rel_floor: float = DEFAULT_REL_FLOOR,
                         mask_mode: str = "numeric") -> KernelField:
    """Convert a dense heat operator to a kernel field: U = matrix / dx^m."""
    if isinstance(op, FactoredHamiltonian):
        raise ValueError("kernel extraction requires dense")
    if op.kind != "heat" or op.t is None:
        raise ValueError("operator must be a heat operator e^{-tH}")
    m = op.n_sites
    U = op.matrix / op.grid.dx**m
    kf = KernelField(U=U, t=op.t, h=op.h, grid=op.grid, sites=op.sites,
                     kinetic=op.kinetic)
    kf.mask = valid_mask(kf, rel_floor, mask_mode)
    return kf


def kernel_noise_floor(grid: GridSpec, n_sites: int, t: float, h: float,
                       safety: float = 1e4) -> float:
    """Absolute floor below which the sampled kernel stops tracking the
    continuum one: the truncated tail of the Dirichlet mode sum,
    sum_{m>n} e^{-t (h^2/2) (m pi / W)^2} * (2/W) per site. The safety
    factor sets the admitted log-kernel pollution at the mask edge to
    ~1/safety (default 1e-4 in psi). The fd2 stencil's dispersion error
    is larger still, so this is a lower bound on its error too."""
    n = grid.n
    width = (n + 1) * grid.dx
    m = np.arange(n + 1, 8 * n + 1)
    tail = (2.0 / width) * np.sum(np.exp(-t * (h * h / 2.0) * (m * np.pi / width) ** 2))
    per_site_peak = (2.0 * math.pi * t * h * h) ** -0.5
    total = 0.0
    for k in range(n_sites):
        # tail on one axis, peak on the others
        total += tail * per_site_peak ** (n_sites - 1)
    return safety * total


def valid_mask(kf: KernelField, rel_floor: float = DEFAULT_REL_FLOOR,
               mask_mode: str = "numeric") -> np.ndarray:
    """U above the noise floors, with both configs inside the window.

    mask_mode 'numeric': underflow + rel_floor * peak. The right mask for
    algebraic identities of the sampled (discrete) model, which hold to
    float precision wherever U is representable.

    mask_mode 'continuum': additionally floors at the Dirichlet mode-sum
    tail, below which the sampled kernel no longer approximates the
    continuum one. Use this when comparing against closed forms or
    continuum estimates.
    """
    floor = max(UNDERFLOW_FLOOR, rel_floor * float(np.max(kf.U)))
    if mask_mode == "continuum":
        floor = max(floor, kernel_noise_floor(kf.grid, kf.n_sites, kf.t, kf.h))
    elif mask_mode != "numeric":
        raise ValueError(f"unknown mask_mode {mask_mode!r}")
    win = kf.window_config_mask()
    return (kf.U > floor) & win[:, None] & win[None, :]


def extract_psi(kf: KernelField, rel_floor: float = DEFAULT_REL_FLOOR) -> KernelField:
    """psi = -ln U - |x-y|^2/(2 t h^2) - (m/2) ln(2 pi t h^2) on the mask."""
    if np.all(kf.U <= UNDERFLOW_FLOOR):
        raise ValueError("kernel underflow")
    mask = kf.mask if kf.mask is not None else valid_mask(kf, rel_floor)
    m = kf.n_sites
    sq = config_sqdist(kf.grid, m)
    with np.errstate(invalid="ignore", divide="ignore"):
        psi = np.where(mask, -np.log(np.where(mask, kf.U, 1.0))
                       - sq / (2.0 * kf.t * kf.h**2)
                       - 0.5 * m * math.log(2.0 * math.pi * kf.t * kf.h**2),
                       np.nan)
    return replace(kf, psi=psi, mask=mask)


def spectral_psi_field(spec: InteractionSpec, region, grid: GridSpec, t: float,
                       kinetic: str = "sine_dvr", dense_budget: int = 5000,
                       rel_floor: float = DEFAULT_REL_FLOOR,
                       mask_mode: str = "numeric") -> KernelField:
    """Standard pipeline: H -> e^{-tH} -> kernel -> psi.

    Pass mask_mode='continuum' when the field will be compared against
    closed forms or continuum estimates (needs a grid fine enough that the
    mode-sum tail is small).
    """
    H = build_hamiltonian(spec, region, grid, kinetic=kinetic,
                          storage="dense", dense_budget=dense_budget)
    op = heat_operator(H, t)
    return extract_psi(kernel_from_operator(op, rel_floor, mask_mode), rel_floor)


# ---------------------------------------------------------------------------
# closed-form oracles


def linear_psi_closed_form(k: float, t: float, h: float, x, y):
    """Single-site V(x) = k x: psi = (k t / 2)(x + y) - h^2 k^2 t^3 / 24."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * k * t * (x + y) - h * h * k * k * t**3 / 24.0


def harmonic_psi_closed_form(omega: float, t: float, h: float, x, y):
    """Single-site V = omega^2 x^2 / 2, from the exact harmonic propagator:
    psi = Q - |x-y|^2/(2 t h^2) - (1/2) ln(tau / sinh tau), with
    Q = omega[(x^2+y^2) cosh tau - 2 x y]/(2 h sinh tau), tau = omega h t."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tau = omega * h * t
    Q = omega * ((x * x + y * y) * np.cosh(tau) - 2 * x * y) / (2.0 * h * np.sinh(tau))
    return Q - (x - y) ** 2 / (2.0 * t * h * h) - 0.5 * math.log(tau / math.sinh(tau))


def harmonic_kernel_closed_form(omega: float, t: float, h: float, x, y):
    """Exact single-site harmonic heat kernel (used as an oracle)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tau = omega * h * t
    pref = math.sqrt(omega / (2.0 * math.pi * h * math.sinh(tau)))
    Q = omega * ((x * x + y * y) * np.cosh(tau) - 2 * x * y) / (2.0 * h * np.sinh(tau))
    return pref * np.exp(-Q)


# ---------------------------------------------------------------------------
# drift-Gaussian propagator


def propagator_params(s: float, t: float):
    """a(s,t) = t/(s(t-s)); the kernel mean is m = (1-s/t) y + (s/t) x."""
    if not (0.0 < s < t):
        raise ValueError("need 0 < s < t")
    return t / (s * (t - s))


def gaussian_propagator(x, xp, y, s: float, t: float, h: float) -> float:
    """Pointwise kernel value (a/(2 pi h^2))^{m/2} exp(-a |x'-mean|^2/(2h^2))."""
    a = propagator_params(s, t)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = x.shape[-1]
    mean = (1.0 - s / t) * y + (s / t) * x
    norm2 = np.sum((xp - mean) ** 2, axis=-1)
    return float((a / (2.0 * math.pi * h * h)) ** (0.5 * m)
                 * np.exp(-a * norm2 / (2.0 * h * h)))


class _AxisInterp:
    """Cubic Lagrange interpolation matrices for arbitrary target points on
    a uniform axis (clamped inside the grid)."""

    def __init__(self, x: np.ndarray):
        self.x = x
        self.n = len(x)
        self.dx = x[1] - x[0]

    def matrix(self, targets: np.ndarray) -> np.ndarray:
        n, dx = self.n, self.dx
        P = np.zeros((len(targets), n))
        pos = np.clip((targets - self.x[0]) / dx, 0.0, n - 1.0)
        i0 = np.clip(np.floor(pos).astype(int) - 1, 0, n - 4)
        u = pos - i0
        for row, (i, uu) in enumerate(zip(i0, u)):
            nodes = np.arange(4, dtype=float)
            w = np.ones(4)
            for a in range(4):
                for b in range(4):
                    if a != b:
                        w[a] *= (uu - nodes[b]) / (nodes[a] - nodes[b])
            P[row, i:i + 4] = w
        return P


def _propagator_1d_matrices(grid: GridSpec, y_val: float, s: float, t: float,
                            h: float, narrow_factor: float = 1.5):
    """One-axis discrete action of the drift propagator from time s to t.

    Returns (mode, payload): mode 'matrix' gives a row-normalized Gaussian
    quadrature matrix; mode 'interp' gives (P, sigma2) where P interpolates
    grid functions at the kernel means and sigma2/2 scales the Laplacian
    correction (used when the kernel is narrower than the grid resolves).
    """
    x = grid.x
    sigma2 = h * h * s * (t - s) / t
    mean = (1.0 - s / t) * y_val + (s / t) * x  # per target point
    if math.sqrt(sigma2) >= narrow_factor * grid.dx:
        G = np.exp(-((x[None, :] - mean[:, None]) ** 2) / (2.0 * sigma2))
        G /= G.sum(axis=1)[:, None]
        return "matrix", G
    P = _AxisInterp(x).matrix(mean)
    return "interp", (P, sigma2)


class DriftPropagator:
    """Discrete action of G_h(y, s, t) on grid functions for one fixed y.

    Factorizes over site axes. Wide kernels use row-normalized Gaussian
    quadrature; narrow kernels switch to cubic interpolation at the kernel
    mean plus the (sigma^2/2) Laplacian correction.
    """

    def __init__(self, grid: GridSpec, y_config: np.ndarray, s: float,
                 t: float, h: float):
        self.grid = grid
        self.m = len(y_config)
        self.ops = [_propagator_1d_matrices(grid, float(yv), s, t, h)
                    for yv in y_config]

    def apply(self, f: np.ndarray) -> np.ndarray:
        n = self.grid.n
        shape = (n,) * self.m
        out = f.reshape(shape)
        needs_corr = any(mode == "interp" for mode, _ in self.ops)
        lap = _grid_laplacian(out, self.grid.dx) if needs_corr else None
        res = out
        res_lap = lap
        for axis, (mode, payload) in enumerate(self.ops):
            if mode == "matrix":
                res = _apply_axis(payload, res, axis)
                if res_lap is not None:
                    res_lap = _apply_axis(payload, res_lap, axis)
            else:
                P, sigma2 = payload
                res = _apply_axis(P, res, axis)
                if res_lap is not None:
                    res_lap = _apply_axis(P, res_lap, axis)
        if res_lap is not None:
            sigma2 = next(p[1] for mode, p in self.ops if mode == "interp")
            res = res + 0.5 * sigma2 * res_lap
        return res.reshape(-1)


def _apply_axis(M: np.ndarray, T: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(T, axis, 0)
    out = np.tensordot(M, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def _grid_laplacian(T: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(T)
    for axis in range(T.ndim):
        up = np.roll(T, -1, axis=axis)
        dn = np.roll(T, 1, axis=axis)
        d2 = (up - 2 * T + dn) / dx**2
        # one-sided copies at the edges
        sl_lo = [slice(None)] * T.ndim
        sl_lo[axis] = 0
        sl_hi = [slice(None)] * T.ndim
        sl_hi[axis] = -1
        sl_lo2 = [slice(None)] * T.ndim
        sl_lo2[axis] = 1
        sl_hi2 = [slice(None)] * T.ndim
        sl_hi2[axis] = -2
        d2[tuple(sl_lo)] = d2[tuple(sl_lo2)]
        d2[tuple(sl_hi)] = d2[tuple(sl_hi2)]
        out += d2
    return out


def _grid_gradient(T: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """Second-order gradient along one axis, one-sided at the edges."""
    return np.gradient(T, dx, axis=axis, edge_order=2)


# ---------------------------------------------------------------------------
# segment averages of the full potential (semiclassical seed)


def segment_average_potential(spec: InteractionSpec, sites: Sequence,
                              x_batch: np.ndarray, y_config: np.ndarray,
                              order: int = 64) -> np.ndarray:
    """integral_0^1 V(y + theta (x - y)) dtheta by Gauss-Legendre."""
    from .interaction import potential_value
    nodes, weights = np.polynomial.legendre.leggauss(order)
    theta = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    x_batch = np.asarray(x_batch, dtype=float)
    out = np.zeros(x_batch.shape[:-1])
    for th, ww in zip(theta, w):
        cfg = y_config[None, :] + th * (x_batch - y_config[None, :])
        out = out + ww * np.asarray(potential_value(spec, sites, cfg))
    return out


def potential_gradient(spec: InteractionSpec, sites: Sequence,
                       x_batch: np.ndarray) -> np.ndarray:
    """grad_lam V at each config: A'(x_lam) + 2 sum_mu d1 B(x_lam, x_mu)."""
    sites = sorted(as_site_set(sites))
    x = np.asarray(x_batch, dtype=float)
    m = len(sites)
    out = np.zeros_like(x)
    sp = spec.site
    xv = x
    if sp.kind == "linear":
        out += sp.k
    elif sp.kind == "pseudo_linear_well":
        out += sp.a * xv / np.sqrt(1.0 + xv * xv)
    elif sp.kind == "harmonic":
        out += sp.omega**2 * xv
    pair = spec.pair
    if pair.kind != "zero" and pair.J != 0.0:
        for i, lam in enumerate(sites):
            acc = np.zeros(x.shape[:-1])
            for j, mu in enumerate(sites):
                if i == j:
                    continue
                wgt = pair.weight(lam, mu)
                if wgt == 0.0:
                    continue
                if pair.kind == "cosine_diff":
                    acc = acc - 2.0 * wgt * np.sin(x[..., i] - x[..., j])
                else:  # bounded_product: d/dx [sin x sin y] = cos x sin y
                    acc = acc + 2.0 * wgt * np.cos(x[..., i]) * np.sin(x[..., j])
            out[..., i] += acc
    return out


# ---------------------------------------------------------------------------
# Duhamel fixed-point engine


@dataclass
class SolverParams:
    n_intervals: int = 8
    nodes_per_interval: int = 16
    max_sweeps: int = 50
    tol: float = 1e-10
    t0_factor: float = 1e-3
    max_splits: int = 6


@dataclass
class DuhamelResult:
    psi: np.ndarray            # psi(., y, t) on the grid, flat
    u: np.ndarray              # (n_sites, dim) final gradient fields
    y_config: np.ndarray
    t: float
    t0: float
    sweeps: list
    residuals: list
    intervals: list


def duhamel_solve(spec: InteractionSpec, region, grid: GridSpec,
                  y_config: np.ndarray, t: float,
                  params: SolverParams | None = None) -> DuhamelResult:
    """Solve the gradient fixed-point system on successive intervals and
    close with the quadrature for psi itself.

    The iteration per interval [a, b] is
      u_lam(., s) = (a/s) G(a->s) u_lam(., a)
                    + int_a^s (r/s) G(r->s)[grad_lam V - h^2 sum_mu u_mu d_lam u_mu] dr
    and the closing integral
      psi(., b) = G(a->b) psi(., a)
                  + int_a^b G(r->b)[V - (h^2/2) sum_mu |u_mu|^2] dr.

    Starts at t0 = t0_factor * min(T0/h, t) with the semiclassical seed
    psi ~ t0 * segment-average of V. Non-contraction splits the interval.
    """
    from .interaction import hypothesis_constants, potential_value

    params = params or SolverParams()
    sites = sorted(as_site_set(region))
    m = len(sites)
    if m > 2:
        raise ValueError("duhamel engine scope is |Lambda| <= 2")
    n = grid.n
    dim = n**m
    y_config = np.asarray(y_config, dtype=float)
    h = spec.h

    try:
        t0_scale = hypothesis_constants(spec).T0 / h
    except ValueError:
        t0_scale = math.inf
    t0 = params.t0_factor * min(t, t0_scale if math.isfinite(t0_scale) else t)

    # static grids and forcings
    x = grid.x
    mesh = np.meshgrid(*([x] * m), indexing="ij")
    configs = np.stack([g.reshape(-1) for g in mesh], axis=1)  # (dim, m)
    V = np.asarray(potential_value(spec, sites, configs))
    gradV = potential_gradient(spec, sites, configs)            # (dim, m)

    # semiclassical seed at t0
    seg = segment_average_potential(spec, sites, configs, y_config)
    psi = t0 * seg
    theta_nodes, theta_w = np.polynomial.legendre.leggauss(64)
    thetas = 0.5 * (theta_nodes + 1.0)
    tw = 0.5 * theta_w
    u = np.zeros((m, dim))
    for th, ww in zip(thetas, tw):
        cfg = y_config[None, :] + th * (configs - y_config[None, :])
        gv = potential_gradient(spec, sites, cfg)
        u += ww * th * gv.T
    u *= t0

    edges = list(np.linspace(t0, t, params.n_intervals + 1))
    stack = [(edges[i], edges[i + 1], 0) for i in range(len(edges) - 1)]
    sweeps_log, resid_log, intervals_log = [], [], []

    def grad_axis(field_flat: np.ndarray, axis: int) -> np.ndarray:
        T = field_flat.reshape((n,) * m)
        return _grid_gradient(T, grid.dx, axis).reshape(-1)

    idx = 0
    while idx < len(stack):
        a, b, depth = stack[idx]
        mm = params.nodes_per_interval
        s_nodes = np.linspace(a, b, mm + 1)
        ds = s_nodes[1] - s_nodes[0]
        # propagators G(s_j -> s_i) for j < i
        props = {}
        for i in range(1, mm + 1):
            for j in range(0, i):
                props[(j, i)] = DriftPropagator(grid, y_config, s_nodes[j],
                                                s_nodes[i], h)

        u_nodes = np.repeat(u[None, :, :], mm + 1, axis=0)  # (nodes, m, dim)

        def forcing(uk: np.ndarray) -> np.ndarray:
            # grad_lam V - h^2 sum_mu u_mu d_lam u_mu  at one node
            F = gradV.T.copy()
            for lam in range(m):
                acc = np.zeros(dim)
                for mu in range(m):
                    acc += uk[mu] * grad_axis(uk[mu], lam)
                F[lam] -= h * h * acc
            return F

        prev_change = math.inf
        grow = 0
        converged = False
        for sweep in range(params.max_sweeps):
            F_nodes = np.stack([forcing(u_nodes[k]) for k in range(mm + 1)])
            new = u_nodes.copy()
            for i in range(1, mm + 1):
                si = s_nodes[i]
                acc = (a / si) * np.stack([props[(0, i)].apply(u[lam])
                                           for lam in range(m)])
                # trapezoid over r in [a, s_i]
                for j in range(0, i + 1):
                    wj = ds * (0.5 if j in (0, i) else 1.0)
                    if wj == 0.0:
                        continue
                    term = F_nodes[j] * (s_nodes[j] / si)
                    if j == i:
                        acc += wj * term
                    else:
                        acc += wj * np.stack([props[(j, i)].apply(term[lam])
                                              for lam in range(m)])
                new[i] = acc
            change = float(np.max(np.abs(new - u_nodes)))
            u_nodes = new
            scale = float(np.max(np.abs(u_nodes))) + 1e-30
            if change <= params.tol * max(1.0, scale):
                converged = True
                sweeps_log.append(sweep + 1)
                resid_log.append(change)
                break
            grow = grow + 1 if change > prev_change else 0
            prev_change = change
            if grow >= 3:
                break
        if not converged:
            if grow >= 3 and depth < params.max_splits:
                mid = 0.5 * (a + b)
                stack[idx:idx + 1] = [(a, mid, depth + 1), (mid, b, depth + 1)]
                continue
            if grow >= 3:
                raise RuntimeError(f"duhamel iteration not contracting on "
                                   f"[{a:.3g},{b:.3g}], last change {prev_change:.3e}")
            sweeps_log.append(params.max_sweeps)
            resid_log.append(prev_change)
        intervals_log.append((a, b))

        # close psi on [a, b]
        F_nodes = np.stack([forcing(u_nodes[k]) for k in range(mm + 1)])
        g_nodes = [V - 0.5 * h * h * np.sum(u_nodes[k] ** 2, axis=0)
                   for k in range(mm + 1)]
        acc = props[(0, mm)].apply(psi)
        for j in range(0, mm + 1):
            wj = ds * (0.5 if j in (0, mm) else 1.0)
            if j == mm:
                acc += wj * g_nodes[j]
            else:
                acc += wj * props[(j, mm)].apply(g_nodes[j])
        psi = acc
        u = u_nodes[-1]
        idx += 1

    return DuhamelResult(psi=psi, u=u, y_config=y_config, t=t, t0=t0,
                         sweeps=sweeps_log, residuals=resid_log,
                         intervals=intervals_log)


# ---------------------------------------------------------------------------
# PDE residual check


def residual_check(kf_lo: KernelField, kf: KernelField, kf_hi: KernelField,
                   spec: InteractionSpec):
    """Sup over the window of the Cauchy-problem residual

      psi_t + ((x-y)/t) . grad_x psi - (h^2/2) lap_x psi - V + (h^2/2)|grad_x psi|^2

    with centered differences in space and time. Returns (sup, (ix, iy))."""
    from .interaction import potential_value
    t, h = kf.t, kf.h
    m = kf.n_sites
    grid = kf.grid
    n = grid.n
    dt = kf_hi.t - kf.t
    if not math.isclose(kf.t - kf_lo.t, dt, rel_tol=1e-6):
        raise ValueError("need symmetric t-stencil fields")
    P = kf.psi_tensor()
    psi_t = (kf_hi.psi_tensor() - kf_lo.psi_tensor()) / (2.0 * dt)

    x = grid.x
    mesh = np.meshgrid(*([x] * m), indexing="ij")
    configs = np.stack([g.reshape(-1) for g in mesh], axis=1)
    V = np.asarray(potential_value(spec, kf.sites, configs)).reshape((n,) * m)

    res = psi_t.copy()
    lap = np.zeros_like(P)
    for lam in range(m):
        gx = _masked_central_diff(P, grid.dx, axis=lam)
        shape_x = [1] * (2 * m)
        shape_x[lam] = n
        xs = x.reshape(shape_x)
        shape_y = [1] * (2 * m)
        shape_y[m + lam] = n
        ys = x.reshape(shape_y)
        res = res + ((xs - ys) / t) * gx
        res = res + 0.5 * h * h * gx * gx
        d2 = _masked_second_diff(P, grid.dx, axis=lam)
        lap = lap + d2
    res = res - 0.5 * h * h * lap
    res = res - V.reshape((n,) * m + (1,) * m)
    win = grid.window
    wmask = np.ones_like(res, dtype=bool)
    for ax in range(2 * m):
        shape = [1] * (2 * m)
        shape[ax] = n
        wmask &= win.reshape(shape)
    vals = np.where(wmask, np.abs(res), np.nan)
    if np.all(np.isnan(vals)):
        raise ValueError("window too small for stencil")
    flat = np.nanargmax(vals)
    loc = np.unravel_index(flat, vals.shape)
    return float(np.nanmax(vals)), loc


def _masked_central_diff(T: np.ndarray, dx: float, axis: int) -> np.ndarray:
    up = _shift_nan(T, -1, axis)
    dn = _shift_nan(T, 1, axis)
    return (up - dn) / (2.0 * dx)


def _masked_second_diff(T: np.ndarray, dx: float, axis: int) -> np.ndarray:
    up = _shift_nan(T, -1, axis)
    dn = _shift_nan(T, 1, axis)
    return (up - 2.0 * T + dn) / dx**2


def _shift_nan(T: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Shift with NaN fill (no wraparound)."""
    out = np.roll(T, k, axis=axis)
    sl = [slice(None)] * T.ndim
    if k > 0:
        sl[axis] = slice(0, k)
    else:
        sl[axis] = slice(T.shape[axis] + k, T.shape[axis])
    out[tuple(sl)] = np.nan
    return out


# ---------------------------------------------------------------------------
# translation differences S_u and weighted norms


def support_of_shift(u: np.ndarray) -> tuple:
    """sigma(u): indices of nonzero shift components."""
    u = np.asarray(u)
    return tuple(int(i) for i in np.nonzero(u)[0])


def translate_difference(field: np.ndarray, grid: GridSpec, n_sites: int,
                         u, v=None) -> np.ndarray:
    """(S_u f)(x, y) = f(x+u, y+u) - f(x, y) on the (x..., y...) tensor;
    S_u S_v when `v` is given. Shifts must be grid-aligned; points whose
    shifted image leaves the grid come back NaN."""
    T = np.asarray(field, dtype=float)
    if T.ndim != 2 * n_sites:
        T = T.reshape((grid.n,) * (2 * n_sites))

    def s_op(F, shift):
        shift = np.asarray(shift, dtype=float)
        ks = shift / grid.dx
        kk = np.rint(ks).astype(int)
        if np.max(np.abs(ks - kk)) > 1e-9:
            raise ValueError("shift must be an integer multiple of dx")
        out = F
        for lam, k in enumerate(kk):
            if k == 0:
                continue
            out = _shift_nan(out, -k, axis=lam)
            out = _shift_nan(out, -k, axis=n_sites + lam)
        return out - F

    out = s_op(T, u)
    if v is not None:
        out = s_op(out, v)
    if np.all(np.isnan(out)):
        raise ValueError("shift leaves the window empty")
    return out


def psi_gradient_sup(kf: KernelField) -> np.ndarray:
    """Per-site sup over the mask of |(d_x psi, d_y psi)| (euclidean)."""
    P = kf.psi_tensor()
    m = kf.n_sites
    out = np.zeros(m)
    for lam in range(m):
        gx = _masked_central_diff(P, kf.grid.dx, axis=lam)
        gy = _masked_central_diff(P, kf.grid.dx, axis=m + lam)
        mag = np.sqrt(gx * gx + gy * gy)
        out[lam] = np.nanmax(mag)
    return out


def weighted_norm(kf: KernelField, eps: float, m_order: int, E=None, F=None,
                  infinity: bool = False) -> float:
    """eps-weighted derivative norms of psi, maximized over the window.

    m_order = 1: sum_lam |(d_x, d_y)_lam psi| / eps^{D(lam, E, F)} (the sum
    needs at least one set; without sets it is the sup over lam).
    m_order >= 2: x-derivatives, sup over (lam_1..lam_{m-1}) of
    sum_mu |d_{lam_1}..d_mu psi| / eps^{diam or D(.., E, F)}.
    `infinity` switches to the all-sup variant.
    """
    if not 1 <= m_order <= 3:
        raise ValueError("supported m is 1..3")
    P = kf.psi_tensor()
    m = kf.n_sites
    dx = kf.grid.dx
    sites = list(kf.sites)
    sets = [s for s in (E, F) if s is not None]

    def weight(site_tuple) -> float:
        objs = [frozenset([s]) for s in site_tuple] + [as_site_set(s) for s in sets]
        if len(objs) < 2:
            return 1.0
        return eps ** pairwise_max_dist(*objs)

    if m_order == 1:
        mags = []
        for lam in range(m):
            gx = _masked_central_diff(P, dx, axis=lam)
            gy = _masked_central_diff(P, dx, axis=m + lam)
            mags.append(np.sqrt(gx * gx + gy * gy) / weight((sites[lam],)))
        if infinity or not sets:
            return float(np.nanmax(np.stack(mags)))
        total = np.zeros_like(mags[0])
        for v in mags:
            total = total + v
        return float(np.nanmax(total))

    # higher orders: x-derivative tensors, cached by sorted axis multiset
    cache: dict = {}

    def dpsi(axes: tuple) -> np.ndarray:
        key = tuple(sorted(axes))
        if key not in cache:
            out = P
            for ax in key:
                out = _masked_central_diff(out, dx, axis=ax)
            cache[key] = out
        return cache[key]

    import itertools as it
    lead = list(it.product(range(m), repeat=m_order - 1))
    best = -math.inf
    for tup in lead:
        if infinity:
            for mu in range(m):
                D = np.abs(dpsi(tup + (mu,)))
                w = weight(tuple(sites[i] for i in tup + (mu,)))
                best = max(best, float(np.nanmax(D / w)))
        else:
            total = None
            for mu in range(m):
                D = np.abs(dpsi(tup + (mu,)))
                w = weight(tuple(sites[i] for i in tup + (mu,)))
                total = D / w if total is None else total + D / w
            best = max(best, float(np.nanmax(total)))
    return best


# ---------------------------------------------------------------------------
# serialization: CSV body + JSON sidecar


def save_kernel_field(kf: KernelField, path_base: str) -> tuple:
    """Write {base}.csv with (x_index, y_index, U, psi, mask) and a JSON
    sidecar {base}.json with (t, h, grid, sites)."""
    csv_path, json_path = path_base + ".csv", path_base + ".json"
    mask = kf.mask if kf.mask is not None else valid_mask(kf)
    psi = kf.psi if kf.psi is not None else np.full_like(kf.U, np.nan)
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x_index", "y_index", "U", "psi", "mask"])
        for i in range(kf.dim):
            for j in range(kf.dim):
                wr.writerow([i, j, repr(float(kf.U[i, j])),
                             repr(float(psi[i, j])), int(mask[i, j])])
    sidecar = {
        "t": kf.t, "h": kf.h, "kinetic": kf.kinetic,
        "grid": {"half_width": kf.grid.half_width, "n": kf.grid.n,
                 "interior_margin": kf.grid.interior_margin},
        "sites": [list(s) for s in kf.sites],
    }
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return csv_path, json_path


def load_kernel_field(path_base: str) -> KernelField:
    with open(path_base + ".json") as fh:
        side = json.load(fh)
    grid = GridSpec(half_width=side["grid"]["half_width"], n=side["grid"]["n"],
                    interior_margin=side["grid"]["interior_margin"])
    sites = tuple(tuple(s) for s in side["sites"])
    dim = grid.n ** len(sites)
    U = np.empty((dim, dim))
    psi = np.empty((dim, dim))
    mask = np.empty((dim, dim), dtype=bool)
    with open(path_base + ".csv") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            i, j = int(row[0]), int(row[1])
            U[i, j] = float(row[2])
            psi[i, j] = float(row[3])
            mask[i, j] = bool(int(row[4]))
    return KernelField(U=U, t=side["t"], h=side["h"], grid=grid, sites=sites,
                       psi=psi, mask=mask, kinetic=side["kinetic"])
