"""Gibbs means, covariances, correlation-decay fits, mean energy per site
and thermodynamic-limit sweeps, and the coupling-interpolation experiment.

Observables are either multiplications (sampled functions on the grid of
their support) or dense matrices there; means are Tr(e^{-tH} A)/Z on the
dense path, with a matrix-product-purification path for chains too large
to diagonalize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hamiltonian import (GridSpec, LatticeOperator, build_hamiltonian,
                          heat_operator, kinetic_matrix, partition_function,
                          potential_grid_vector, slq_trace)
from .interaction import InteractionSpec, interaction_split
from .kernel import spectral_psi_field, _masked_central_diff
from .lattice import Box, as_site_set

COVARIANCE_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# observables


@dataclass
class Observable:
    """Local observable supported on a site subset.

    kind 'multiplication': data is the sampled function on grid^{|E|}
    (flat); kind 'dense': data is a matrix there. op_norm is sup|f| or the
    spectral norm respectively.
    """

    support: tuple
    kind: str
    data: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.support = tuple(sorted(as_site_set(self.support)))
        if self.kind not in ("multiplication", "dense"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        e = len(self.support)
        dim = self.grid.n**e
        self.data = np.asarray(self.data, dtype=float)
        if self.kind == "multiplication":
            self.data = self.data.reshape(dim)
        else:
            self.data = self.data.reshape(dim, dim)

    @property
    def op_norm(self) -> float:
        if self.kind == "multiplication":
            return float(np.max(np.abs(self.data)))
        return float(np.linalg.norm(self.data, 2))

    def _positions(self, sites: Sequence) -> list:
        sites = list(sites)
        pos = []
        for s in self.support:
            if s not in sites:
                raise ValueError(f"support site {s} outside the system")
            pos.append(sites.index(s))
        return pos

    def embed_diag(self, sites: Sequence, grid: GridSpec) -> np.ndarray:
        """Multiplication observable as a diagonal over the full grid."""
        if self.kind != "multiplication":
            raise ValueError("diagonal embedding needs a multiplication observable")
        pos = self._positions(sites)
        m = len(sites)
        n = grid.n
        t = self.data.reshape((n,) * len(self.support))
        shape = [1] * m
        for k, p in enumerate(pos):
            shape[p] = n
        # place axes of t at positions pos
        expanded = np.ones((n,) * m)
        src = t
        # move axes into place via reshape+broadcast
        order = [None] * m
        for k, p in enumerate(pos):
            order[p] = k
        full_shape = [n if order[i] is not None else 1 for i in range(m)]
        perm = [o for o in order if o is not None]
        src = np.moveaxis(src, range(len(pos)), np.argsort(np.argsort(perm)))
        expanded = expanded * src.reshape(full_shape)
        return expanded.reshape(-1)

    def embed(self, sites: Sequence, grid: GridSpec) -> np.ndarray:
        """Dense matrix on the full grid (identity off the support)."""
        sites = list(sites)
        m = len(sites)
        n = grid.n
        if self.kind == "multiplication":
            return np.diag(self.embed_diag(sites, grid))
        pos = self._positions(sites)
        e = len(pos)
        A = self.data.reshape((n,) * (2 * e))
        letters = "abcdefghijklmnopqrstuvwxyz"
        in_x = [None] * m
        in_y = [None] * m
        sub_A = []
        li = iter(letters)
        for k, p in enumerate(pos):
            in_x[p] = next(li)
        for k, p in enumerate(pos):
            in_y[p] = next(li)
        sub_A = "".join(in_x[p] for p in pos) + "".join(in_y[p] for p in pos)
        id_subs = []
        operands = [A]
        for i in range(m):
            if in_x[i] is None:
                cx, cy = next(li), next(li)
                in_x[i], in_y[i] = cx, cy
                id_subs.append(cx + cy)
                operands.append(np.eye(n))
        out_sub = "".join(in_x) + "".join(in_y)
        expr = ",".join([sub_A] + id_subs) + "->" + out_sub
        full = np.einsum(expr, *operands)
        return full.reshape(n**m, n**m)


def multiplication_observable(f: Callable, support, grid: GridSpec) -> Observable:
    """Sample f on the tensor grid of the support."""
    support = tuple(sorted(as_site_set(support)))
    mesh = np.meshgrid(*([grid.x] * len(support)), indexing="ij")
    vals = f(*mesh) if len(support) > 1 else f(mesh[0])
    return Observable(support=support, kind="multiplication", data=vals,
                      grid=grid)


# ---------------------------------------------------------------------------
# means and covariances (dense path)


def gibbs_mean(H: LatticeOperator, A: Observable, t: float) -> float:
    """Tr(e^{-tH} A) / Z with identity padding off the support."""
    M = heat_operator(H, t).matrix
    Z = float(np.trace(M))
    if A.kind == "multiplication":
        diag = A.embed_diag(H.sites, H.grid)
        return float(np.sum(np.diag(M) * diag) / Z)
    return float(np.trace(M @ A.embed(H.sites, H.grid)) / Z)


def covariance(H: LatticeOperator, A: Observable, B: Observable, t: float) -> float:
    """Cov(A, B) = E(AB) - E(A) E(B); supports must be disjoint."""
    if as_site_set(A.support) & as_site_set(B.support):
        raise ValueError("supports must be disjoint")
    M = heat_operator(H, t).matrix
    Z = float(np.trace(M))
    if A.kind == "multiplication" and B.kind == "multiplication":
        da = A.embed_diag(H.sites, H.grid)
        db = B.embed_diag(H.sites, H.grid)
        rho = np.diag(M)
        Ea = float(np.sum(rho * da)) / Z
        Eb = float(np.sum(rho * db)) / Z
        Eab = float(np.sum(rho * da * db)) / Z
        return Eab - Ea * Eb
    Af = A.embed(H.sites, H.grid)
    Bf = B.embed(H.sites, H.grid)
    Ea = float(np.trace(M @ Af)) / Z
    Eb = float(np.trace(M @ Bf)) / Z
    Eab = float(np.trace(M @ Af @ Bf)) / Z
    return Eab - Ea * Eb


# ---------------------------------------------------------------------------
# correlation-decay sweep


@dataclass
class DecayFit:
    rows: list                  # dicts: distance, cov, abs_cov, n_emp
    delta_fit: float
    r2: float
    status: str                 # 'ok' | 'zero-signal'
    method: str
    t: float
    runtime_s: float = 0.0

    @property
    def abs_covs(self):
        return [r["abs_cov"] for r in self.rows]


def fit_decay(rows: list, t: float, floor: float = COVARIANCE_FLOOR):
    """Least-squares line through (distance, ln|Cov|); rows below the floor
    are zero-class and excluded."""
    used = [r for r in rows if r["abs_cov"] > floor]
    if len(used) < 2:
        return math.nan, math.nan, "zero-signal"
    rr = np.array([r["distance"] for r in used], dtype=float)
    lc = np.log(np.array([r["abs_cov"] for r in used]))
    A = np.vstack([rr, np.ones_like(rr)]).T
    sol, *_ = np.linalg.lstsq(A, lc, rcond=None)
    pred = A @ sol
    ss_res = float(np.sum((lc - pred) ** 2))
    ss_tot = float(np.sum((lc - lc.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(sol[0])), r2, "ok"


def decay_sweep(spec: InteractionSpec, chain_length: int, t: float,
                grid: GridSpec, observable: Callable = np.tanh,
                method: str = "auto", dense_budget: int = 5000,
                kinetic: str = "sine_dvr", tensor_tol: float = 1e-13) -> DecayFit:
    """|Cov(f(x_0), f(x_r))| for r = 1 .. chain_length-1 on a d=1 chain,
    with the log-linear decay fit.

    method 'dense' diagonalizes; 'tensor' uses the matrix-product
    purification of e^{-tH/2} (exact to the stated truncation tolerance,
    cross-validated against dense at small sizes); 'auto' picks by budget.
    """
    import time as _time
    if spec.d != 1:
        raise ValueError("decay sweep is defined for d=1 chains")
    t_start = _time.time()
    dim = grid.n**chain_length
    if method == "auto":
        method = "dense" if dim <= dense_budget else "tensor"
    sites = [(i,) for i in range(chain_length)]
    fvec = observable(grid.x)
    one = np.ones(grid.n)
    if method == "dense":
        H = build_hamiltonian(spec, sites, grid, kinetic=kinetic,
                              storage="dense", dense_budget=dense_budget)
        M = heat_operator(H, t).matrix
        rho = np.diag(M).copy()
    elif method == "tensor":
        from .tensor import gibbs_chain_purification
        pur = gibbs_chain_purification(spec, chain_length, grid, t,
                                       kinetic=kinetic, tol=tensor_tol)
        rho = None
    else:
        raise ValueError(f"unknown method {method!r}")

    def weighted(site_vecs):
        if rho is not None:
            w = np.ones(1)
            full = np.ones((grid.n,) * chain_length)
            for ax, v in enumerate(site_vecs):
                shape = [1] * chain_length
                shape[ax] = grid.n
                full = full * v.reshape(shape)
            return float(np.sum(full.reshape(-1) * rho))
        return pur.weighted_trace(site_vecs)

    Z = weighted([one] * chain_length)
    if Z <= 0 or not np.isfinite(Z):
        raise ValueError("signal underflow: partition function invalid")
    wf = [fvec] + [one] * (chain_length - 1)
    Ef = weighted(wf) / Z
    rows = []
    for r in range(1, chain_length):
        wg = [one] * chain_length
        wg[r] = fvec
        wfg = [fvec] + [one] * (chain_length - 1)
        wfg[r] = fvec
        cov = weighted(wfg) / Z - Ef * (weighted(wg) / Z)
        rows.append({"distance": r, "cov": cov, "abs_cov": abs(cov)})
    delta, r2, status = fit_decay(rows, t)
    for r in rows:
        if status == "ok":
            r["n_emp"] = r["abs_cov"] / (t * 1.0 * delta ** r["distance"])
        else:
            r["n_emp"] = 0.0
    return DecayFit(rows=rows, delta_fit=delta, r2=r2, status=status,
                    method=method, t=t, runtime_s=_time.time() - t_start)


# ---------------------------------------------------------------------------
# mean energy and thermodynamic sweeps


@dataclass
class MeanEnergyEstimate:
    value: float
    stderr: float

    def __float__(self):
        return self.value


def mean_energy(H, t: float, method: str = "dense", kprobes: int = 32,
                lanczos_steps: int = 40, seed: int = 0):
    """X_Lambda(t) = d/dt ln Z = -Tr(H e^{-tH}) / Z."""
    if method == "dense":
        w, _ = H.eigh()
        e = np.exp(-t * (w - w.min()))
        return float(-np.sum(w * e) / np.sum(e))
    if method == "hutchinson":
        num = slq_trace(H, lambda lam: lam * np.exp(-t * lam), kprobes=kprobes,
                        steps=lanczos_steps, seed=seed)
        den = slq_trace(H, lambda lam: np.exp(-t * lam), kprobes=kprobes,
                        steps=lanczos_steps, seed=seed + 1)
        value = -num.value / den.value
        rel = (num.stderr / abs(num.value) if num.value else 0.0) + \
              (den.stderr / den.value if den.value else 0.0)
        return MeanEnergyEstimate(value=value, stderr=abs(value) * rel)
    raise ValueError(f"unknown method {method!r}")


def thermo_sweep(spec: InteractionSpec, n_range: Sequence, t: float,
                 grid: GridSpec, observable: Callable = np.tanh,
                 dense_budget: int = 10000, kinetic: str = "sine_dvr") -> list:
    """Rows over Lambda_n = [-n, n] (d=1): local mean at the center site,
    per-site mean energy, and the hyperplane splitting defect
    |X_Lambda - X_Lambda1 - X_Lambda2| (Lambda1 = [-n,0], Lambda2 = [1,n])."""
    rows = []
    status = "ok"
    for n in n_range:
        lam = Box((-n,), (n,))
        sites = lam.sites()
        try:
            H = build_hamiltonian(spec, sites, grid, kinetic=kinetic,
                                  storage="dense", dense_budget=dense_budget)
        except ValueError as exc:
            status = f"partial: {exc}"
            break
        A = multiplication_observable(observable, {(0,)}, grid)
        ea = gibbs_mean(H, A, t)
        X = mean_energy(H, t)
        row = {"n": n, "sites": len(sites), "local_mean": ea,
               "energy": X, "energy_per_site": X / len(sites)}
        if n >= 1:
            H1 = build_hamiltonian(spec, Box((-n,), (0,)), grid, kinetic=kinetic,
                                   storage="dense", dense_budget=dense_budget)
            H2 = build_hamiltonian(spec, Box((1,), (n,)), grid, kinetic=kinetic,
                                   storage="dense", dense_budget=dense_budget)
            defect = X - mean_energy(H1, t) - mean_energy(H2, t)
            row["split_defect"] = abs(defect)
        rows.append(row)
    return {"rows": rows, "status": status}


# ---------------------------------------------------------------------------
# coupling interpolation across a hyperplane


def theta_interpolation(spec: InteractionSpec, lam1, lam2, t: float,
                        grid: GridSpec, theta_grid: Sequence,
                        delta_theta: float = 1e-2, kinetic: str = "sine_dvr",
                        dense_budget: int = 5000) -> dict:
    """Interpolated potential V_theta = V - theta * (cross interaction),
    fully decoupling the two regions at theta = 1.

    Reports, per theta: sup |d psi / d theta| (central differences in
    theta) and its per-site x-gradient sups against dist(site, interface).
    """
    s1 = sorted(as_site_set(lam1))
    s2 = sorted(as_site_set(lam2))
    if s1[-1][0] + 1 != s2[0][0]:
        raise ValueError("regions must be adjacent at a site boundary")
    sigma_coord = s1[-1][0]
    sites = s1 + s2
    m = len(sites)
    n = grid.n
    inter = interaction_split(spec, s1, s2)
    mesh = np.meshgrid(*([grid.x] * m), indexing="ij")
    configs = np.stack([g.reshape(-1) for g in mesh], axis=1)
    v_cross = np.array([inter.ordered_total(c) for c in configs])
    v_full = potential_grid_vector(spec, sites, grid)
    k1d = kinetic_matrix(grid, spec.h, kinetic)

    def psi_at(theta: float):
        H = np.diag(v_full - theta * v_cross)
        for axis in range(m):
            H += np.kron(np.kron(np.eye(n**axis), k1d), np.eye(n**(m - 1 - axis)))
        op = LatticeOperator(matrix=H, sites=tuple(sites), grid=grid, h=spec.h,
                             kinetic=kinetic)
        from .kernel import extract_psi, kernel_from_operator
        return extract_psi(kernel_from_operator(heat_operator(op, t)))

    out_rows = []
    for theta in theta_grid:
        lo = psi_at(max(0.0, theta - delta_theta))
        hi = psi_at(min(1.0, theta + delta_theta))
        span = (min(1.0, theta + delta_theta) - max(0.0, theta - delta_theta))
        dpsi = (hi.psi - lo.psi) / span
        sup = float(np.nanmax(np.abs(dpsi)))
        T = dpsi.reshape((n,) * (2 * m))
        per_site = []
        for idx, s in enumerate(sites):
            g = _masked_central_diff(T, grid.dx, axis=idx)
            per_site.append({"site": s[0], "dist": abs(s[0] - sigma_coord),
                             "grad_sup": float(np.nanmax(np.abs(g)))})
        out_rows.append({"theta": theta, "sup_dpsi": sup, "per_site": per_site})
    return {"sigma": sigma_coord, "rows": out_rows}
