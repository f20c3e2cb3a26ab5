import math

import numpy as np
import pytest

from latticeheat.hamiltonian import (FactoredHamiltonian, GridSpec,
                                     LatticeOperator, build_hamiltonian,
                                     heat_operator, kinetic_matrix,
                                     partition_function, slq_trace)
from latticeheat.interaction import (InteractionSpec, PairCouplingSpec,
                                     SitePotentialSpec)
from latticeheat.lattice import Box

FREE = InteractionSpec()
WELL = InteractionSpec(site=SitePotentialSpec(kind="pseudo_linear_well", a=1.0),
                       pair=PairCouplingSpec(kind="cosine_diff", J=0.1, eps=0.2))


def test_grid_spec():
    g = GridSpec(half_width=6.0, n=4)
    assert g.dx == pytest.approx(4.0)
    assert np.allclose(g.x, [-6, -2, 2, 6])
    with pytest.raises(ValueError):
        GridSpec(n=3)
    g32 = GridSpec(half_width=6.0, n=32)
    assert g32.margin == 6
    assert not g32.contains_origin
    assert GridSpec(n=33).contains_origin


def test_fd2_stencil_matrix():
    g = GridSpec(half_width=6.0, n=4)
    H = build_hamiltonian(FREE, Box((0,), (0,)), g, kinetic="fd2",
                          storage="dense")
    dx2 = g.dx**2
    want = 0.5 * (np.diag([2.0] * 4) - np.diag([1.0] * 3, 1)
                  - np.diag([1.0] * 3, -1)) / dx2
    assert np.allclose(H.matrix, want)


def test_constant_shift():
    g = GridSpec(half_width=6.0, n=8)
    spec_c = InteractionSpec(site=SitePotentialSpec(kind="constant", c=0.7))
    H0 = build_hamiltonian(FREE, Box((0,), (0,)), g, storage="dense")
    Hc = build_hamiltonian(spec_c, Box((0,), (0,)), g, storage="dense")
    assert np.allclose(Hc.matrix, H0.matrix + 0.7 * np.eye(8))


def test_two_site_free_kronecker_sum():
    g = GridSpec(half_width=6.0, n=6)
    H1 = build_hamiltonian(FREE, Box((0,), (0,)), g, storage="dense")
    H2 = build_hamiltonian(FREE, Box((0,), (1,)), g, storage="dense")
    w1 = np.linalg.eigvalsh(H1.matrix)
    w2 = np.linalg.eigvalsh(H2.matrix)
    pairwise = np.sort((w1[:, None] + w1[None, :]).reshape(-1))
    assert np.allclose(w2, pairwise, atol=1e-10)


def test_heat_operator_identity_limit_and_semigroup():
    g = GridSpec(half_width=6.0, n=16)
    H = build_hamiltonian(WELL, Box((0,), (0,)), g, storage="dense")
    U = heat_operator(H, 1e-8)
    assert np.max(np.abs(U.matrix - np.eye(16))) <= 1e-6
    s, t = 0.07, 0.13
    Ust = heat_operator(H, s + t).matrix
    prod = heat_operator(H, s).matrix @ heat_operator(H, t).matrix
    assert np.max(np.abs(Ust - prod)) <= 1e-10
    with pytest.raises(ValueError):
        heat_operator(H, 0.0)


def test_heat_operator_positivity():
    # fd2 is an M-matrix: its exponential is entrywise nonnegative exactly.
    g = GridSpec(half_width=6.0, n=16)
    Hfd = build_hamiltonian(WELL, Box((0,), (0,)), g, kinetic="fd2",
                            storage="dense")
    assert np.min(heat_operator(Hfd, 0.5).matrix) >= -1e-12
    # sine_dvr dips negative only at the mode-truncation scale
    from latticeheat.kernel import kernel_noise_floor
    Hdvr = build_hamiltonian(WELL, Box((0,), (0,)), g, storage="dense")
    floor = kernel_noise_floor(g, 1, 0.5, 1.0, safety=1.0) * g.dx
    assert np.min(heat_operator(Hdvr, 0.5).matrix) >= -10 * floor


def test_harmonic_spectrum_and_trace():
    g = GridSpec(half_width=8.0, n=128)
    spec = InteractionSpec(site=SitePotentialSpec(kind="harmonic", omega=1.0))
    H = build_hamiltonian(spec, Box((0,), (0,)), g, storage="dense")
    w = np.linalg.eigvalsh(H.matrix)
    assert w[0] == pytest.approx(0.5, abs=1e-8)
    t = 0.5
    Z = partition_function(H, t)
    exact = sum(math.exp(-t * (k + 0.5)) for k in range(200))
    assert Z == pytest.approx(exact, rel=1e-4)


def test_partition_function_scalar():
    op = LatticeOperator(matrix=np.array([[2.0]]), sites=((0,),),
                         grid=GridSpec(n=4), h=1.0)
    assert partition_function(op, 0.3) == pytest.approx(math.exp(-0.6))


def test_partition_function_box_spectrum():
    # free particle in the Dirichlet box: Z ~ sum e^{-t h^2 pi^2 k^2 / (8 L^2)}
    g = GridSpec(half_width=6.0, n=64)
    H = build_hamiltonian(FREE, Box((0,), (0,)), g, storage="dense")
    t = 0.5
    Z = partition_function(H, t)
    L = g.half_width
    approx = sum(math.exp(-t * math.pi**2 * k**2 / (8 * L**2))
                 for k in range(1, 2000))
    assert Z == pytest.approx(approx, rel=0.05)
    # and to near machine accuracy against the actual wall width
    W = (g.n + 1) * g.dx
    exact = sum(math.exp(-t * 0.5 * (k * math.pi / W) ** 2)
                for k in range(1, g.n + 1))
    assert Z == pytest.approx(exact, rel=1e-12)


def test_trace_monotone():
    g = GridSpec(half_width=6.0, n=24)
    H = build_hamiltonian(WELL, Box((0,), (0,)), g, storage="dense")
    zs = [partition_function(H, t) for t in (0.2, 0.4, 0.8)]
    assert zs[0] > zs[1] > zs[2]


def test_budget_errors_name_dimension():
    g = GridSpec(half_width=6.0, n=32)
    with pytest.raises(ValueError, match="32768"):
        build_hamiltonian(WELL, Box((0,), (2,)), g, storage="dense",
                          dense_budget=5000)
    with pytest.raises(ValueError, match="sparse budget"):
        build_hamiltonian(WELL, Box((0,), (7,)), g, storage="sparse",
                          sparse_budget=10**6)


def test_factored_matvec_matches_dense():
    g = GridSpec(half_width=5.0, n=6)
    dense = build_hamiltonian(WELL, Box((0,), (2,)), g, storage="dense")
    fact = build_hamiltonian(WELL, Box((0,), (2,)), g, storage="sparse")
    assert isinstance(fact, FactoredHamiltonian)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(216, 3))
    assert np.allclose(fact.matvec(X), dense.matrix @ X, atol=1e-10)
    lo, hi = fact.eig_bounds()
    w = np.linalg.eigvalsh(dense.matrix)
    assert lo <= w[0] + 1e-9 and w[-1] <= hi + 1e-9


def test_hutchinson_partition():
    # 2-site grid, dim 1024; the spectral range stays Lanczos-resolvable
    g = GridSpec(half_width=6.0, n=32)
    H = build_hamiltonian(WELL, Box((0,), (1,)), g, storage="dense")
    t = 0.3
    exact = partition_function(H, t)
    est = partition_function(H, t, method="hutchinson", kprobes=32,
                             lanczos_steps=60, seed=11)
    assert abs(est.value - exact) / exact <= 0.05
    assert est.stderr > 0
    with pytest.raises(ValueError):
        partition_function(H, t, method="hutchinson", kprobes=0)


def test_slq_on_factored():
    g = GridSpec(half_width=5.0, n=8)
    fact = build_hamiltonian(WELL, Box((0,), (3,)), g, storage="sparse")
    dense = build_hamiltonian(WELL, Box((0,), (3,)), g, storage="dense")
    t = 0.4
    exact = partition_function(dense, t)
    est = slq_trace(fact, lambda lam: np.exp(-t * lam), kprobes=24, steps=30,
                    seed=3)
    assert abs(est.value - exact) / exact <= 0.05
