"""Integer-lattice geometry: boxes, faces, interiors, projections, polymers.

Everything here is exact integer combinatorics on Z^d with the l-infinity
metric. Boxes are closed integer intervals per axis; point boxes are
first-class. All enumeration orders are deterministic (lexicographic), so
reruns are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Site = tuple  # tuple of ints, length d


def as_site(obj) -> Site:
    """Normalize an int (d=1) or an iterable of ints to a site tuple."""
    if isinstance(obj, (int, np.integer)):
        return (int(obj),)
    site = tuple(int(c) for c in obj)
    if len(site) == 0:
        raise ValueError("empty geometry: site needs at least one coordinate")
    return site


@dataclass(frozen=True, order=True)
class Box:
    """Product of closed integer intervals prod_j [lo_j, hi_j], lo_j <= hi_j."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", as_site(self.lo))
        object.__setattr__(self, "hi", as_site(self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same dimension")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"invalid box: lo {self.lo} exceeds hi {self.hi}")

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def diam(self) -> int:
        return max(b - a for a, b in zip(self.lo, self.hi))

    @property
    def n_sites(self) -> int:
        n = 1
        for a, b in zip(self.lo, self.hi):
            n *= b - a + 1
        return n

    def sites(self) -> list:
        """All sites of the box in lexicographic order."""
        ranges = [range(a, b + 1) for a, b in zip(self.lo, self.hi)]
        return [tuple(s) for s in itertools.product(*ranges)]

    def contains_site(self, site) -> bool:
        site = as_site(site)
        return all(a <= c <= b for a, b, c in zip(self.lo, self.hi, site))

    def contains_box(self, other: "Box") -> bool:
        return all(a <= oa and ob <= b for a, b, oa, ob in
                   zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other: "Box") -> bool:
        return all(max(a, oa) <= min(b, ob) for a, b, oa, ob in
                   zip(self.lo, self.hi, other.lo, other.hi))

    def face(self, axis: int, side: str) -> frozenset:
        """Face B^(axis)_side: sites with coordinate pinned to lo (side '-')
        or hi (side '+') on the given axis."""
        pin = self.lo[axis] if side == "-" else self.hi[axis]
        return frozenset(s for s in self.sites() if s[axis] == pin)

    def __repr__(self):
        if self.d == 1:
            return f"[{self.lo[0]},{self.hi[0]}]"
        return "x".join(f"[{a},{b}]" for a, b in zip(self.lo, self.hi))


def as_site_set(obj) -> frozenset:
    """Normalize a Site, Box, or iterable of sites to a frozenset of sites."""
    if isinstance(obj, Box):
        return frozenset(obj.sites())
    if isinstance(obj, (int, np.integer)):
        return frozenset([as_site(obj)])
    if isinstance(obj, tuple) and all(isinstance(c, (int, np.integer)) for c in obj):
        return frozenset([as_site(obj)])
    sites = frozenset(as_site(s) for s in obj)
    return sites


def linf_dist(a, b) -> int:
    """min over element pairs of max_j |a_j - b_j| (0 for overlapping sets)."""
    sa, sb = as_site_set(a), as_site_set(b)
    if not sa or not sb:
        raise ValueError("empty geometry")
    # fast path for boxes: per-axis interval gaps
    if isinstance(a, Box) and isinstance(b, Box):
        return max(max(0, max(al - bh, bl - ah))
                   for al, ah, bl, bh in zip(a.lo, a.hi, b.lo, b.hi))
    return min(max(abs(ca - cb) for ca, cb in zip(p, q)) for p in sa for q in sb)


def pairwise_max_dist(*sets) -> int:
    """D(E_1, ..., E_m): the largest pairwise l-infinity distance."""
    sets = [as_site_set(s) for s in sets]
    if len(sets) < 2:
        return 0
    return max(linf_dist(p, q) for p, q in itertools.combinations(sets, 2))


def interior_boxes(Q: Box) -> list:
    """Int(Q) with face-removal counts.

    Per axis with lo < hi the candidates are keep / drop-lo / drop-hi /
    drop-both (the last only if it stays nonempty); a point axis only keeps.
    Returns [(box, removed_face_count)] in deterministic order.
    """
    per_axis = []
    for a, b in zip(Q.lo, Q.hi):
        if a == b:
            per_axis.append([(a, b, 0)])
        else:
            cands = [(a, b, 0), (a + 1, b, 1), (a, b - 1, 1)]
            if a + 1 <= b - 1:
                cands.append((a + 1, b - 1, 2))
            per_axis.append(cands)
    out = []
    for combo in itertools.product(*per_axis):
        lo = tuple(c[0] for c in combo)
        hi = tuple(c[1] for c in combo)
        m = sum(c[2] for c in combo)
        out.append((Box(lo, hi), m))
    return out


def interior_count(Q: Box) -> int:
    """Exact size of Int(Q): prod over axes of 1 / 3 / 4."""
    n = 1
    for a, b in zip(Q.lo, Q.hi):
        n *= 1 if a == b else (3 if b - a == 1 else 4)
    return n


def enumerate_boxes(lam: Box, max_diam: int) -> list:
    """All boxes Q contained in lam with diam(Q) <= max_diam, lexicographic
    by (lo, hi), each exactly once."""
    if max_diam < 0:
        raise ValueError("max_diam must be >= 0")
    per_axis = []
    for A, B in zip(lam.lo, lam.hi):
        pairs = [(a, b) for a in range(A, B + 1)
                 for b in range(a, min(B, a + max_diam) + 1)]
        per_axis.append(pairs)
    boxes = []
    for combo in itertools.product(*per_axis):
        lo = tuple(c[0] for c in combo)
        hi = tuple(c[1] for c in combo)
        box = Box(lo, hi)
        if box.diam <= max_diam:
            boxes.append(box)
    boxes.sort()
    return boxes


def _config_array(x, sites) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != len(sites):
        raise ValueError(f"config has {x.shape[0]} entries for {len(sites)} sites")
    return x


def project_pi(Q, x, sites: Sequence) -> np.ndarray:
    """(pi_Q x)_lam = x_lam for lam in Q, 0 otherwise.

    `x` is an array aligned with `sites` (ordered site tuples of Lambda).
    """
    Qs = as_site_set(Q) if Q is not None else frozenset()
    sites = [as_site(s) for s in sites]
    x = _config_array(x, sites)
    keep = np.array([s in Qs for s in sites], dtype=bool)
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out


def project_Pi(Q, x, y, sites: Sequence):
    """Doubled projector: per site (x,y) if in Q else (0, y-x)."""
    Qs = as_site_set(Q) if Q is not None else frozenset()
    sites = [as_site(s) for s in sites]
    x = _config_array(x, sites)
    y = _config_array(y, sites)
    keep = np.array([s in Qs for s in sites], dtype=bool)
    xo = np.where(keep, x, 0.0)
    yo = np.where(keep, y, y - x)
    return xo, yo


@dataclass(frozen=True)
class Polymer:
    """Ordered sequence of boxes, consecutive ones intersecting, diam >= 1."""

    boxes: tuple

    def __post_init__(self):
        boxes = tuple(self.boxes)
        object.__setattr__(self, "boxes", boxes)
        if len(boxes) < 1:
            raise ValueError("polymer needs at least one box")
        for q in boxes:
            if q.diam < 1:
                raise ValueError("polymer boxes must have diameter >= 1")
        for q1, q2 in zip(boxes, boxes[1:]):
            if not q1.intersects(q2):
                raise ValueError("consecutive polymer boxes must intersect")

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)


def enumerate_polymers(E1, E2, lam: Box | None, max_boxes: int,
                       max_diam: int, boxes: Iterable | None = None,
                       allow_duplicates: bool = True) -> list:
    """All polymers whose first box meets E1 and last meets E2.

    The box universe is the boxes of `lam` with diam in [1, max_diam] unless
    an explicit `boxes` iterable is supplied. Duplicate boxes inside one
    polymer are permitted by default (a polymer is a sequence).
    """
    if max_boxes < 1:
        raise ValueError("max_boxes must be >= 1")
    e1, e2 = as_site_set(E1), as_site_set(E2)
    if e1 & e2:
        raise ValueError("E1 and E2 must be disjoint")
    if boxes is None:
        if lam is None:
            raise ValueError("need a box universe: pass lam or boxes")
        boxes = [q for q in enumerate_boxes(lam, max_diam) if q.diam >= 1]
    else:
        boxes = sorted(set(boxes))
    meets1 = [q for q in boxes if any(q.contains_site(s) for s in e1)]

    def meets(q: Box, ss) -> bool:
        return any(q.contains_site(s) for s in ss)

    out = []

    def extend(seq):
        last = seq[-1]
        if meets(last, e2):
            out.append(Polymer(tuple(seq)))
        if len(seq) == max_boxes:
            return
        for q in boxes:
            if not allow_duplicates and q in seq:
                continue
            if last.intersects(q):
                extend(seq + [q])

    for q0 in meets1:
        extend([q0])
    return out
