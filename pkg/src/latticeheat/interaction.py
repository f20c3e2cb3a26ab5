"""Interaction families: single-site wells, exponentially decaying pair
couplings, assembled lattice potentials and their derivative constants.

One degree of freedom per site. Pair couplings have the form
B(lam, mu; x, y) = J * eps^{|lam-mu|_inf} * g(x, y) with g symmetric,
translation covariant, and all derivatives bounded by 1. The pair sum in
the lattice potential runs over ordered pairs (both (lam,mu) and (mu,lam)),
so each unordered pair contributes twice.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import Box, as_site, as_site_set, linf_dist

SITE_KINDS = ("zero", "constant", "linear", "pseudo_linear_well", "harmonic")
PAIR_KINDS = ("zero", "cosine_diff", "bounded_product")


@dataclass(frozen=True)
class SitePotentialSpec:
    """Single-site well A(x).

    kinds: zero | constant(c) | linear(k) | pseudo_linear_well(a) |
    harmonic(omega). The harmonic well is an exact-propagator oracle only:
    its first derivative is unbounded, so it sits outside the decay
    hypothesis and is rejected by `hypothesis_constants`.
    """

    kind: str = "zero"
    c: float = 0.0
    k: float = 0.0
    a: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in SITE_KINDS:
            raise ValueError(f"unknown site potential kind {self.kind!r}")
        if self.kind == "pseudo_linear_well" and self.a <= 0:
            raise ValueError("pseudo_linear_well requires a > 0")

    @property
    def oracle_only(self) -> bool:
        return self.kind == "harmonic"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "constant":
            return np.full_like(x, self.c)
        if self.kind == "linear":
            return self.k * x
        if self.kind == "pseudo_linear_well":
            return self.a * np.sqrt(1.0 + x * x)
        return 0.5 * self.omega**2 * x * x

    def d1_sup(self) -> float:
        """sup |A'| (inf for the harmonic oracle)."""
        return {"zero": 0.0, "constant": 0.0, "linear": abs(self.k),
                "pseudo_linear_well": self.a, "harmonic": math.inf}[self.kind]

    def d2_sup(self) -> float:
        """sup |A''|."""
        return {"zero": 0.0, "constant": 0.0, "linear": 0.0,
                "pseudo_linear_well": self.a, "harmonic": self.omega**2}[self.kind]


@dataclass(frozen=True)
class PairCouplingSpec:
    """Pair coupling B(lam,mu;x,y) = J * eps^{|lam-mu|} * g(x,y).

    cosine_diff: g = cos(x - y); bounded_product: g = sin(x) sin(y).
    Both are symmetric (g(x,y) = g(y,x)) with all derivatives bounded by 1.
    """

    kind: str = "zero"
    J: float = 0.0
    eps: float = 0.2

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise ValueError(f"unknown pair coupling kind {self.kind!r}")
        if self.kind != "zero" and not (0.0 < self.eps < 1.0):
            raise ValueError("decay parameter must lie in (0,1)")

    def g(self, x, y):
        if self.kind == "zero":
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        if self.kind == "cosine_diff":
            return np.cos(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return np.sin(np.asarray(x, dtype=float)) * np.sin(np.asarray(y, dtype=float))

    def weight(self, lam, mu) -> float:
        """J * eps^{|lam-mu|_inf}; zero couplings weigh nothing."""
        if self.kind == "zero" or self.J == 0.0:
            return 0.0
        return self.J * self.eps ** linf_dist(as_site(lam), as_site(mu))

    def value(self, lam, mu, x, y):
        w = self.weight(lam, mu)
        if w == 0.0:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        return w * self.g(x, y)


@dataclass(frozen=True)
class InteractionSpec:
    """Full interaction family: site well + pair coupling + dimension + hbar."""

    site: SitePotentialSpec = field(default_factory=SitePotentialSpec)
    pair: PairCouplingSpec = field(default_factory=PairCouplingSpec)
    d: int = 1
    h: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension d must be >= 1")
        if self.h <= 0:
            raise ValueError("hbar h must be > 0")

    @property
    def eps(self) -> float:
        return self.pair.eps


def _resolve_sites(region) -> list:
    if isinstance(region, Box):
        return region.sites()
    return sorted(as_site_set(region))


def potential_value(spec: InteractionSpec, region, x) -> float:
    """V_Lambda(x) = sum_lam A(x_lam) + sum_{lam != mu} B_{lam mu}(x_lam, x_mu).

    The pair sum counts ordered pairs. `x` is aligned with the sites of
    `region` in lexicographic order.
    """
    sites = _resolve_sites(region)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(sites):
        raise ValueError(f"config of length {x.shape[-1]} for {len(sites)} sites")
    if spec.site.oracle_only and spec.pair.kind != "zero":
        warnings.warn("harmonic well is an oracle outside the decay hypothesis; "
                      "pair-coupling results are not covered by it", stacklevel=2)
    total = np.sum(spec.site.value(x), axis=-1)
    for i, lam in enumerate(sites):
        for j, mu in enumerate(sites):
            if i != j:
                total = total + spec.pair.value(lam, mu, x[..., i], x[..., j])
    return float(total) if np.ndim(total) == 0 else total


def shell_count(d: int, r: int) -> int:
    """Number of lattice points at l-infinity distance exactly r (r >= 1)."""
    return (2 * r + 1) ** d - (2 * r - 1) ** d


def decay_series(d: int, eps: float, tol: float = 1e-16) -> float:
    """sum_{r>=1} N_d(r) * eps^r, summed to machine convergence."""
    if eps == 0.0:
        return 0.0
    total, r = 0.0, 1
    while True:
        term = shell_count(d, r) * eps**r
        total += term
        if term < tol * max(total, 1.0) or r > 10_000:
            return total
        r += 1


@dataclass(frozen=True)
class HypothesisConstants:
    M1: float
    M2: float
    T0: float
    weight_eps: float


def hypothesis_constants(spec: InteractionSpec) -> HypothesisConstants:
    """Derivative constants of the interaction family.

    M1 bounds sup_lam |grad_{x_lam} V_Lambda| uniformly in Lambda:
    sup|A'| + 2J sum_r N_d(r) eps^r.

    M2 bounds the eps-weighted second-derivative sum. The weighted sum is
    evaluated at weight parameter sqrt(eps) (strictly larger than the
    coupling decay eps), which is what makes the off-diagonal part of the
    sum geometric and Lambda-independent:
      M2 = sup|A''| + 2J sum_r N_d(r) eps^r  +  2J sum_r N_d(r) (sqrt(eps))^r.
    T0 = M2^{-1/2} (math.inf for a free family).
    """
    if spec.site.oracle_only:
        raise ValueError("outside (H_eps): harmonic well is oracle-only")
    d = spec.d
    J = spec.pair.J if spec.pair.kind != "zero" else 0.0
    eps = spec.pair.eps
    pair_sum = 2.0 * abs(J) * decay_series(d, eps)
    weight_eps = math.sqrt(eps)
    M1 = spec.site.d1_sup() + pair_sum
    if J == 0.0:
        M2 = spec.site.d2_sup()
    else:
        off_diag = 2.0 * abs(J) * decay_series(d, eps / weight_eps)
        M2 = spec.site.d2_sup() + pair_sum + off_diag
    T0 = math.inf if M2 == 0.0 else M2 ** -0.5
    return HypothesisConstants(M1=M1, M2=M2, T0=T0, weight_eps=weight_eps)


@dataclass(frozen=True)
class InterRegionPotential:
    """V_inter between two disjoint site sets (single directed sum).

    `value` is the directed sum over (lam in set1, mu in set2); the ordered
    double-sum convention of the full potential makes the decoupling
    identity read V_Lambda = V_Lambda1 + V_Lambda2 + 2 * V_inter, so
    `ordered_total` (= 2 * value for symmetric couplings) is what must be
    subtracted to decouple the two regions.
    """

    spec: InteractionSpec
    set1: frozenset
    set2: frozenset
    sites: tuple

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        idx = {s: i for i, s in enumerate(self.sites)}
        total = 0.0
        for lam in sorted(self.set1):
            for mu in sorted(self.set2):
                total += float(np.asarray(
                    self.spec.pair.value(lam, mu, x[..., idx[lam]], x[..., idx[mu]])))
        return total

    def ordered_total(self, x) -> float:
        x = np.asarray(x, dtype=float)
        idx = {s: i for i, s in enumerate(self.sites)}
        total = 0.0
        for lam in sorted(self.set1):
            for mu in sorted(self.set2):
                total += float(np.asarray(
                    self.spec.pair.value(lam, mu, x[..., idx[lam]], x[..., idx[mu]])))
                total += float(np.asarray(
                    self.spec.pair.value(mu, lam, x[..., idx[mu]], x[..., idx[lam]])))
        return total

    __call__ = value


def interaction_split(spec: InteractionSpec, region1, region2) -> InterRegionPotential:
    """Interaction between two disjoint regions, per the directed-sum form."""
    s1, s2 = as_site_set(region1), as_site_set(region2)
    if s1 & s2:
        raise ValueError("regions must be disjoint")
    sites = tuple(sorted(s1 | s2))
    return InterRegionPotential(spec=spec, set1=s1, set2=s2, sites=sites)
