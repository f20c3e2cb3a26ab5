import math

import numpy as np
import pytest

from latticeheat.hamiltonian import GridSpec, build_hamiltonian, heat_operator
from latticeheat.interaction import (InteractionSpec, PairCouplingSpec,
                                     SitePotentialSpec)
from latticeheat.lattice import Box
from latticeheat.tensor import (chain_hmpo, gibbs_chain_purification,
                                max_rank, mps_inner)

WELL = InteractionSpec(site=SitePotentialSpec(kind="pseudo_linear_well", a=1.0),
                       pair=PairCouplingSpec(kind="cosine_diff", J=0.1, eps=0.2))


def mpo_to_matrix(mpo, n, sites):
    """Contract an MPO to its dense matrix (test oracle)."""
    full = None
    for s, W in enumerate(mpo):
        # W: (Dl, Dr, r, c)
        if full is None:
            full = W
        else:
            full = np.einsum("abrc,bdsq->adrscq", full, W)
            Dl, Dr = full.shape[0], full.shape[1]
            r1 = full.shape[2] * full.shape[3]
            full = full.reshape(Dl, Dr, r1, r1 if s == 0 else -1)
    return full[0, -1]


def dense_mpo_matrix(mpo, n, m):
    env = np.eye(1).reshape(1, 1, 1, 1)  # (D, rows, cols) seed
    mat = None
    for W in mpo:
        if mat is None:
            mat = W  # (1, D, n, n)
        else:
            mat = np.einsum("xyrc,yzsq->xzrscq", mat, W)
            x, z = mat.shape[0], mat.shape[1]
            rr = mat.shape[2] * mat.shape[3]
            cc = mat.shape[4] * mat.shape[5]
            mat = mat.reshape(x, z, rr, cc)
    return mat[0, 0] if mat.shape[1] == 1 else mat[0, -1]


def test_hmpo_matches_dense_hamiltonian():
    grid = GridSpec(half_width=5.0, n=5)
    for spec in (WELL,
                 InteractionSpec(site=SitePotentialSpec(kind="pseudo_linear_well", a=1.0)),
                 InteractionSpec(site=SitePotentialSpec(kind="pseudo_linear_well", a=1.0),
                                 pair=PairCouplingSpec(kind="bounded_product",
                                                       J=0.2, eps=0.3))):
        for m in (1, 2, 3):
            mpo = chain_hmpo(spec, m, grid)
            got = dense_mpo_matrix(mpo, grid.n, m)
            H = build_hamiltonian(spec, Box((0,), (m - 1,)), grid,
                                  storage="dense")
            assert np.max(np.abs(got - H.matrix)) <= 1e-12 * max(
                1.0, np.max(np.abs(H.matrix)))


def test_purification_matches_dense_two_sites():
    grid = GridSpec(half_width=6.0, n=8)
    t = 0.2
    pur = gibbs_chain_purification(WELL, 2, grid, t)
    H = build_hamiltonian(WELL, Box((0,), (1,)), grid, storage="dense")
    M = heat_operator(H, t).matrix
    Z = float(np.trace(M))
    assert math.exp(pur.log_partition()) == pytest.approx(Z, rel=1e-9)
    fv = np.tanh(grid.x)
    one = np.ones(grid.n)
    rho = np.diag(M)
    for weights, oracle in [
        ([fv, one], float(np.sum(rho.reshape(8, 8).sum(axis=1) * fv))),
        ([fv, fv], float(np.sum(np.outer(fv, fv) * rho.reshape(8, 8)))),
    ]:
        got = pur.weighted_trace(weights)
        assert got == pytest.approx(oracle, rel=1e-8, abs=1e-11)


def test_purification_matches_dense_three_sites():
    grid = GridSpec(half_width=6.0, n=6)
    t = 0.2
    pur = gibbs_chain_purification(WELL, 3, grid, t)
    H = build_hamiltonian(WELL, Box((0,), (2,)), grid, storage="dense")
    M = heat_operator(H, t).matrix
    rho = np.diag(M).reshape(6, 6, 6)
    fv = np.tanh(grid.x)
    one = np.ones(6)
    cov_oracle = (np.einsum("ijk,i,k->", rho, fv, fv) / rho.sum()
                  - np.einsum("ijk,i->", rho, fv) *
                  np.einsum("ijk,k->", rho, fv) / rho.sum() ** 2)
    Z = pur.weighted_trace([one] * 3)
    Ef = pur.weighted_trace([fv, one, one]) / Z
    Eg = pur.weighted_trace([one, one, fv]) / Z
    Efg = pur.weighted_trace([fv, one, fv]) / Z
    assert Efg - Ef * Eg == pytest.approx(cov_oracle, abs=1e-12)


def test_purification_decoupled_rank_one():
    spec = InteractionSpec(site=SitePotentialSpec(kind="pseudo_linear_well", a=1.0))
    grid = GridSpec(half_width=6.0, n=8)
    pur = gibbs_chain_purification(spec, 4, grid, 0.2)
    assert max_rank(pur.mps) == 1
    fv = np.tanh(grid.x)
    one = np.ones(8)
    Z = pur.weighted_trace([one] * 4)
    Ef = pur.weighted_trace([fv, one, one, one]) / Z
    Eg = pur.weighted_trace([one, one, one, fv]) / Z
    Efg = pur.weighted_trace([fv, one, one, fv]) / Z
    assert abs(Efg - Ef * Eg) <= 1e-13


def test_purification_single_site():
    grid = GridSpec(half_width=6.0, n=12)
    t = 0.3
    pur = gibbs_chain_purification(WELL, 1, grid, t)
    H = build_hamiltonian(WELL, Box((0,), (0,)), grid, storage="dense")
    M = heat_operator(H, t).matrix
    assert math.exp(pur.log_partition()) == pytest.approx(float(np.trace(M)),
                                                          rel=1e-11)
