"""Doubling of variables, signed symmetry averaging, Mayer factors and
polymer bounds.

The doubled system lives on X = (x', x'', y', y''); all its fields reduce
to gathers on single-system (x-config, y-config) matrices because the
doubled phase is the sum of two single-system phases. X-points are carried
as index quadruples so that large products never materialize unless asked.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decomposition import all_terms, gauge_field, t_q_doubled
from .hamiltonian import GridSpec, LatticeOperator, heat_operator
from .kernel import KernelField, free_kernel_matrix
from .lattice import Box, as_site_set, enumerate_polymers, linf_dist


# ---------------------------------------------------------------------------
# symmetry group


@dataclass(frozen=True)
class SymmetryElement:
    """Assignment site -> {keep, swap}, constant on E1 and on E2."""

    flips: tuple          # bool per site (sorted site order)
    sgn1: int
    sgn2: int

    @property
    def sgn(self) -> int:
        return self.sgn1 * self.sgn2


def group_elements(sites: Sequence, E1, E2) -> list:
    """All 2^{|Lambda| - |E1| - |E2| + 2} elements with signs."""
    sites = sorted(as_site_set(sites))
    e1, e2 = as_site_set(E1), as_site_set(E2)
    if e1 & e2:
        raise ValueError("E1 and E2 must be disjoint")
    if not (e1 <= set(sites) and e2 <= set(sites)):
        raise ValueError("supports must live inside the site set")
    free = [s for s in sites if s not in e1 and s not in e2]
    out = []
    for b1 in (False, True):
        for b2 in (False, True):
            for bits in itertools.product((False, True), repeat=len(free)):
                fl = []
                it_free = iter(bits)
                for s in sites:
                    if s in e1:
                        fl.append(b1)
                    elif s in e2:
                        fl.append(b2)
                    else:
                        fl.append(next(it_free))
                out.append(SymmetryElement(flips=tuple(fl),
                                           sgn1=-1 if b1 else 1,
                                           sgn2=-1 if b2 else 1))
    return out


# ---------------------------------------------------------------------------
# X-point sets on the doubled space


@dataclass
class XSet:
    """Quadruples of flat config indices (x', x'', y', y'')."""

    ip: np.ndarray
    ipp: np.ndarray
    jp: np.ndarray
    jpp: np.ndarray

    def __len__(self):
        return len(self.ip)


def diagonal_xset(dim: int) -> XSet:
    """All diagonal points X = (x', x'', x', x'')."""
    a, b = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")
    return XSet(ip=a.reshape(-1), ipp=b.reshape(-1),
                jp=a.reshape(-1), jpp=b.reshape(-1))


def random_xset(dim: int, count: int, seed: int = 0) -> XSet:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, dim, size=(4, count))
    return XSet(ip=idx[0], ipp=idx[1], jp=idx[2], jpp=idx[3])


def random_valid_xset(kf: KernelField, count: int, seed: int = 0) -> XSet:
    """Random X-points whose (x', y') and (x'', y'') both hit the valid
    mask of the kernel field (so all gathers are finite)."""
    if kf.psi is None:
        raise ValueError("kernel field needs psi extracted")
    pairs = np.argwhere(np.isfinite(kf.psi))
    if len(pairs) == 0:
        raise ValueError("kernel field has empty valid mask")
    rng = np.random.default_rng(seed)
    sel = rng.integers(0, len(pairs), size=(2, count))
    p1, p2 = pairs[sel[0]], pairs[sel[1]]
    return XSet(ip=p1[:, 0], ipp=p2[:, 0], jp=p1[:, 1], jpp=p2[:, 1])


def full_xset(dim: int) -> XSet:
    """The entire product grid; only for small dimensions (dim^4 points)."""
    if dim**4 > 8_000_000:
        raise ValueError(f"full X grid too large: {dim}^4 points")
    g = np.meshgrid(*([np.arange(dim)] * 4), indexing="ij")
    return XSet(*(a.reshape(-1) for a in g))


# ---------------------------------------------------------------------------
# Mayer factors


@dataclass
class MayerFactors:
    """Everything needed to evaluate Phi_0, f_lambda, f_Q, K_Gamma at
    X-points: single-system matrices plus per-box sup constants."""

    kf: KernelField
    terms_multi: dict            # Box -> DecompositionTerm (diam >= 1)
    terms_point: dict            # Box -> DecompositionTerm (single points)
    M: dict                      # Box -> sup of the doubled term
    gauge: np.ndarray            # psi(0, y-x) matrix
    U0: np.ndarray               # analytic free kernel matrix
    digits: np.ndarray
    strides: np.ndarray

    @property
    def boxes(self) -> list:
        return sorted(self.terms_multi)

    def sigma_apply(self, xs: XSet, sigma: SymmetryElement) -> XSet:
        """Permute X by swapping primed/double-primed per flipped site."""
        fl = np.array(sigma.flips)
        dg = self.digits
        dip, dipp = dg[xs.ip], dg[xs.ipp]
        djp, djpp = dg[xs.jp], dg[xs.jpp]
        nip = np.where(fl[None, :], dipp, dip) @ self.strides
        nipp = np.where(fl[None, :], dip, dipp) @ self.strides
        njp = np.where(fl[None, :], djpp, djp) @ self.strides
        njpp = np.where(fl[None, :], djp, djpp) @ self.strides
        return XSet(ip=nip, ipp=nipp, jp=njp, jpp=njpp)

    def doubled_term(self, Q: Box, xs: XSet) -> np.ndarray:
        term = (self.terms_multi.get(Q) or self.terms_point[Q]).values
        return term[xs.ip, xs.jp] + term[xs.ipp, xs.jpp]

    def f_Q(self, Q: Box, xs: XSet) -> np.ndarray:
        return np.exp(self.M[Q] - self.doubled_term(Q, xs)) - 1.0

    def f_point(self, Q: Box, xs: XSet) -> np.ndarray:
        return np.exp(-self.doubled_term(Q, xs))

    def phi0(self, xs: XSet) -> np.ndarray:
        u0 = self.U0[xs.ip, xs.jp] * self.U0[xs.ipp, xs.jpp]
        g = self.gauge[xs.ip, xs.jp] + self.gauge[xs.ipp, xs.jpp]
        msum = sum(self.M.values())
        return u0 * np.exp(-g) * math.exp(-msum)

    def k_gamma(self, gamma, xs: XSet) -> np.ndarray:
        """K_Gamma = Phi_0 * prod_lam f_lam * prod_{Q in Gamma} f_Q >= 0."""
        out = self.phi0(xs)
        for Q in self.terms_point:
            out = out * self.f_point(Q, xs)
        for Q in gamma:
            out = out * self.f_Q(Q, xs)
        return out

    def doubled_kernel(self, xs: XSet) -> np.ndarray:
        return self.kf.U[xs.ip, xs.jp] * self.kf.U[xs.ipp, xs.jpp]


def mayer_factors(kf: KernelField, max_diam: int | None = None) -> MayerFactors:
    """Build the Mayer factor data from an extracted kernel field.

    M_Q is the sup of the doubled T_Q over the valid domain (twice the
    single-system sup); raises if a term has no valid support.
    """
    if kf.psi is None:
        raise ValueError("kernel field needs psi extracted")
    grid, sites = kf.grid, kf.sites
    terms = all_terms(kf.psi, grid, sites, max_diam)
    terms_multi = {Q: t for Q, t in terms.items() if Q.diam >= 1}
    terms_point = {Q: t for Q, t in terms.items() if Q.diam == 0}
    M = {}
    for Q, t in terms_multi.items():
        if math.isnan(t.sup_norm):
            raise ValueError(f"insufficient valid support for {Q}")
        M[Q] = 2.0 * float(np.nanmax(t.values))
    n = grid.n
    m = len(sites)
    digits = np.stack(np.unravel_index(np.arange(n**m), (n,) * m), axis=1)
    strides = np.array([n ** (m - 1 - k) for k in range(m)])
    U0 = free_kernel_matrix(grid, m, kf.t, kf.h)
    return MayerFactors(kf=kf, terms_multi=terms_multi, terms_point=terms_point,
                        M=M, gauge=gauge_field(kf.psi, grid, m), U0=U0,
                        digits=digits, strides=strides)


def mayer_reconstruct(factors: MayerFactors, xs: XSet,
                      subset_budget: int = 4096):
    """sum_Gamma K_Gamma against the doubled kernel on the X-set.

    Returns (sup relative error over the valid points, number of subsets).
    """
    boxes = factors.boxes
    if 2 ** len(boxes) > subset_budget:
        raise ValueError(f"subset budget exceeded: 2^{len(boxes)} subsets")
    total = np.zeros(len(xs))
    count = 0
    for r in range(len(boxes) + 1):
        for gamma in itertools.combinations(boxes, r):
            total = total + factors.k_gamma(gamma, xs)
            count += 1
    ref = factors.doubled_kernel(xs)
    ok = np.isfinite(total) & np.isfinite(ref) & (ref > 0)
    if not np.any(ok):
        raise ValueError("no valid X points for reconstruction")
    rel = np.abs(total[ok] - ref[ok]) / ref[ok]
    return float(np.max(rel)), count


# ---------------------------------------------------------------------------
# classification and the diagonal-cancellation check


def classify_family(gamma: Sequence, E1, E2) -> str:
    """'C' when the family contains a polymer whose first box meets E1 and
    last meets E2 (union-find over the box intersection graph), else 'NC'."""
    gamma = list(gamma)
    e1, e2 = as_site_set(E1), as_site_set(E2)
    parent = list(range(len(gamma) + 2))  # two virtual nodes for E1, E2

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    N1, N2 = len(gamma), len(gamma) + 1
    for i, q in enumerate(gamma):
        if any(q.contains_site(s) for s in e1):
            union(i, N1)
        if any(q.contains_site(s) for s in e2):
            union(i, N2)
        for j in range(i):
            if q.intersects(gamma[j]):
                union(i, j)
    return "C" if find(N1) == find(N2) else "NC"


def averaged_kernel_W(factors: MayerFactors, E1, E2, xs: XSet,
                      subset_budget: int = 4096,
                      check_paths: bool = True) -> np.ndarray:
    """W = (1/|G|) sum_sigma sgn(sigma) U~(sigma X), assembled directly and
    (optionally) through the Gamma-sum; the two must agree to float."""
    sites = factors.kf.sites
    G = group_elements(sites, E1, E2)
    if len(G) > 2**16:
        raise ValueError("symmetry group too large")
    direct = np.zeros(len(xs))
    for sg in G:
        direct += sg.sgn * factors.doubled_kernel(factors.sigma_apply(xs, sg))
    direct /= len(G)
    if check_paths:
        boxes = factors.boxes
        if 2 ** len(boxes) <= subset_budget:
            via_gamma = np.zeros(len(xs))
            for r in range(len(boxes) + 1):
                for gamma in itertools.combinations(boxes, r):
                    for sg in G:
                        via_gamma += sg.sgn * factors.k_gamma(
                            gamma, factors.sigma_apply(xs, sg))
            via_gamma /= len(G)
            # compare against the kernel magnitude: W itself may vanish
            scale = float(np.nanmax(factors.doubled_kernel(xs)))
            defect = float(np.nanmax(np.abs(direct - via_gamma)))
            if not defect <= 1e-10 * max(scale, 1e-300):
                raise AssertionError(
                    f"W path disagreement {defect:.3e} at kernel scale {scale:.3e}")
    return direct


def lemma73_check(factors: MayerFactors, gamma: Sequence, E1, E2,
                  xs_diag: XSet | None = None):
    """Signed sigma-sum of K_Gamma on the diagonal for an NC family.

    Returns (sup |sum|, scale) where scale is the sup of |K_Gamma| itself;
    raises when the family is connected (the cancellation only holds NC).
    """
    if classify_family(gamma, E1, E2) == "C":
        raise ValueError("lemma applies to NC only")
    dim = factors.kf.dim
    xs = xs_diag if xs_diag is not None else diagonal_xset(dim)
    G = group_elements(factors.kf.sites, E1, E2)
    total = np.zeros(len(xs))
    for sg in G:
        total += sg.sgn * factors.k_gamma(gamma, factors.sigma_apply(xs, sg))
    base = factors.k_gamma(gamma, xs)
    scale = float(np.nanmax(np.abs(base)))
    sup = float(np.nanmax(np.abs(total)))
    return sup, scale


# ---------------------------------------------------------------------------
# doubled covariance (7.1)


def doubled_covariance(H: LatticeOperator, A, B, t: float) -> float:
    """(1 / 2 Z~) Tr(e^{-t H~} (A'-A'')(B'-B'')) through the Kronecker
    structure e^{-tH~} = e^{-tH} (x) e^{-tH}:

      = [Tr(M A B) Z - Tr(M A) Tr(M B)] / Z^2,   M = e^{-tH}.

    A, B are Observables with disjoint supports.
    """
    if as_site_set(A.support) & as_site_set(B.support):
        raise ValueError("supports must be disjoint")
    M = heat_operator(H, t).matrix
    Af = A.embed(H.sites, H.grid)
    Bf = B.embed(H.sites, H.grid)
    Z = float(np.trace(M))
    tr_ab = float(np.trace(M @ Af @ Bf))
    tr_a = float(np.trace(M @ Af))
    tr_b = float(np.trace(M @ Bf))
    return (tr_ab * Z - tr_a * tr_b) / Z**2


def doubled_covariance_bruteforce(H: LatticeOperator, A, B, t: float) -> float:
    """Literal doubled-space trace (materializes dim^2 matrices; small dims
    only). Kept as the independent route for the identity tests."""
    if as_site_set(A.support) & as_site_set(B.support):
        raise ValueError("supports must be disjoint")
    if H.dim > 80:
        raise ValueError("brute-force doubling limited to dim <= 80")
    M = heat_operator(H, t).matrix
    Af = A.embed(H.sites, H.grid)
    Bf = B.embed(H.sites, H.grid)
    I = np.eye(H.dim)
    M2 = np.kron(M, M)
    Ad = np.kron(Af, I) - np.kron(I, Af)
    Bd = np.kron(Bf, I) - np.kron(I, Bf)
    Zt = float(np.trace(M2))
    return float(np.trace(M2 @ Ad @ Bd)) / (2.0 * Zt)


# ---------------------------------------------------------------------------
# polymer weights and the connection bound


def box_weight(Q: Box) -> float:
    return float((1 + Q.diam) ** (2 * Q.d))


def polymer_weight(pi, eps: float, T: float) -> float:
    """N(Pi, eps, T) = prod_j T eps^{diam Q_j} (1 + diam Q_j)^{2d}."""
    out = 1.0
    for Q in pi:
        out *= T * eps**Q.diam * box_weight(Q)
    return out


def phi_sup(x: float, d: int) -> float:
    """sup_{R > 0} (1 + R)^{6d} x^R for x in (0, 1)."""
    if not 0.0 < x < 1.0:
        raise ValueError("argument must be in (0,1)")
    rstar = -6.0 * d / math.log(x) - 1.0
    if rstar <= 0.0:
        return 1.0
    return (1.0 + rstar) ** (6 * d) * x**rstar


def admissible_T1(eps: float, delta: float, d: int) -> float:
    """Largest T with gamma (1 + T Phi(eps/gamma)) <= delta, gamma =
    sqrt(eps delta). This is the proof-driven validity threshold; it is
    very conservative."""
    if not 0.0 < eps < delta < 1.0:
        raise ValueError("need 0 < eps < delta < 1")
    gamma = math.sqrt(eps * delta)
    return (delta / gamma - 1.0) / phi_sup(eps / gamma, d)


@dataclass
class PolymerBoundResult:
    lhs: float
    rhs: float
    T1: float
    admissible: bool
    n_polymers: int
    distance: int


def polymer_bound_check(E1, E2, eps: float, delta: float, T: float,
                        max_boxes: int = 4, max_diam: int = 3, d: int = 1,
                        enforce_admissibility: bool = False) -> PolymerBoundResult:
    """Brute-force sum of N(Pi, eps, T) over polymers connecting E1 and E2
    against T min(|E1|,|E2|) [Phi(sqrt(eps/delta)) / (1 - delta)] delta^dist.

    The proof's admissibility threshold T1 is reported; by default the sum
    is still evaluated above it (the bound itself has huge slack there),
    with `enforce_admissibility` restoring the strict precondition.
    """
    e1, e2 = as_site_set(E1), as_site_set(E2)
    T1 = admissible_T1(eps, delta, d)
    admissible = T < T1
    if enforce_admissibility and not admissible:
        raise ValueError("outside admissible temperature range")
    # universe: boxes within reach of a connecting polymer
    all_sites = sorted(e1 | e2)
    dd = len(all_sites[0])
    lo = tuple(min(s[k] for s in all_sites) - max_boxes * max_diam for k in range(dd))
    hi = tuple(max(s[k] for s in all_sites) + max_boxes * max_diam for k in range(dd))
    window = Box(lo, hi)
    polys = enumerate_polymers(e1, e2, window, max_boxes, max_diam)
    lhs = sum(polymer_weight(p, eps, T) for p in polys)
    dist = linf_dist(e1, e2)
    K = phi_sup(math.sqrt(eps / delta), d) / (1.0 - delta)
    rhs = T * min(len(e1), len(e2)) * K * delta**dist
    return PolymerBoundResult(lhs=lhs, rhs=rhs, T1=T1, admissible=admissible,
                              n_polymers=len(polys), distance=dist)
