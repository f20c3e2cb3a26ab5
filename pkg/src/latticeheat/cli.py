"""Command-line entry point: experiment orchestration, artifact emission
with a hashed manifest, and the verification suite runner.

Reruns with the same config and seed produce byte-identical CSV bodies;
timestamps only ever appear in the manifest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_config
from .hamiltonian import GridSpec, build_hamiltonian, heat_operator
from .interaction import hypothesis_constants
from .kernel import (extract_psi, kernel_from_operator, psi_gradient_sup,
                     save_kernel_field, spectral_psi_field)
from .lattice import Box

SCHEMA_TEXT = """# Output column schemas

## kernel_summary.csv
t, sup_psi_window (sup |psi| over the valid window), grad_sup_max
(largest per-site sup |(d_x,d_y) psi|), mask_fraction.

## kernel_t*.csv
x_index, y_index, U, psi, mask -- one row per (x-config, y-config) pair;
the JSON sidecar carries (t, h, grid, sites).

## decay_profile.csv
diam, sup_norm, normalized (sup / (t eps^diam (1+diam)^{2d})),
boxes_counted.

## splitting.json
defect (sup |psi_Lambda - t sum_E Aseg - psi_rest|), reference_scale
(|E| (t + h^2 t^2)), per removed-set record.

## mayer.json
reconstruction sup relative errors per X-set, per-NC-family diagonal
cancellation sups, W path-agreement defect.

## polymer_bound.csv
distance, lhs_sum, rhs_bound, margin (rhs - lhs), n_polymers, T1.

## decay.csv
distance, cov, abs_cov, n_emp (|Cov| / (t min|E| delta_fit^r)).

## thermo.csv
n, sites, local_mean, energy, energy_per_site, split_defect.
"""


def _write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _sidecar(path: str, cfg: ExperimentConfig, extra: dict, runtime: float):
    body = {
        "config": _config_echo(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "runtime_s": round(runtime, 3),
    }
    body.update(extra)
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=repr)


def _config_echo(cfg: ExperimentConfig) -> dict:
    return {
        "interaction": {
            "site": {"kind": cfg.interaction.site.kind,
                     "c": cfg.interaction.site.c, "k": cfg.interaction.site.k,
                     "a": cfg.interaction.site.a,
                     "omega": cfg.interaction.site.omega},
            "pair": {"kind": cfg.interaction.pair.kind,
                     "J": cfg.interaction.pair.J,
                     "eps": cfg.interaction.pair.eps},
            "d": cfg.interaction.d,
        },
        "lattice": {"lo": list(cfg.lattice_box.lo), "hi": list(cfg.lattice_box.hi)},
        "grid": {"n": cfg.grid.n, "half_width": cfg.grid.half_width,
                 "interior_margin": cfg.grid.interior_margin},
        "schedule": {"t": cfg.t_list, "h": cfg.h, "theta": cfg.theta_grid},
        "experiment": cfg.experiment,
        "budget": {"dense": cfg.dense_budget, "sparse": cfg.sparse_budget},
        "seed": cfg.seed,
        "options": cfg.options,
    }


def _manifest(out_dir: str, artifacts: list, cfg: ExperimentConfig, status: str):
    entries = []
    for p in sorted(artifacts):
        with open(p, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        entries.append({"path": os.path.relpath(p, out_dir),
                        "sha256": digest, "bytes": os.path.getsize(p)})
    body = {"artifacts": entries, "status": status,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config": _config_echo(cfg), "version": __version__}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
    return path


# ---------------------------------------------------------------------------
# experiments


def _run_kernel(cfg: ExperimentConfig, out: str) -> list:
    artifacts = []
    rows = []
    for t in cfg.t_list:
        kf = spectral_psi_field(cfg.interaction, cfg.lattice_box, cfg.grid, t,
                                dense_budget=cfg.dense_budget)
        base = os.path.join(out, f"kernel_t{t:g}")
        artifacts.extend(save_kernel_field(kf, base))
        gs = psi_gradient_sup(kf)
        rows.append([t, float(np.nanmax(np.abs(kf.psi))), float(np.max(gs)),
                     float(kf.mask.mean())])
    path = os.path.join(out, "kernel_summary.csv")
    _write_csv(path, ["t", "sup_psi_window", "grad_sup_max", "mask_fraction"], rows)
    artifacts.append(path)
    return artifacts


def _run_decompose(cfg: ExperimentConfig, out: str) -> list:
    from .decomposition import all_terms, decay_profile, splitting_check, \
        telescope_doubled
    artifacts = []
    eps = cfg.interaction.eps
    t = cfg.t_list[0]
    kf = spectral_psi_field(cfg.interaction, cfg.lattice_box, cfg.grid, t,
                            dense_budget=cfg.dense_budget)
    terms = all_terms(kf.psi, cfg.grid, cfg.lattice_box,
                      cfg.options.get("max_diam"))
    rows = decay_profile(terms, eps, t, cfg.interaction.d)
    path = os.path.join(out, "decay_profile.csv")
    _write_csv(path, ["diam", "sup_norm", "normalized", "boxes_counted"],
               [[r["diam"], r["sup_norm"], r["normalized"], r["boxes_counted"]]
                for r in rows])
    artifacts.append(path)
    tele = telescope_doubled(terms, kf.psi, cfg.grid, cfg.lattice_box)
    # the splitting comparison is a continuum statement: run it on a
    # two-site subchain with a grid fine enough to resolve the kernel
    sites = cfg.lattice_box.sites()
    sub = sites[:2]
    fine = GridSpec(half_width=min(cfg.grid.half_width, 4.5), n=65)
    split = splitting_check(cfg.interaction, sub, {sub[0]}, fine, t)
    rec = {"telescoping_defect": tele,
           "splitting": {"defect": split.defect,
                         "reference_scale": split.reference_scale,
                         "removed": list(sub[0]),
                         "subchain": [list(s) for s in sub],
                         "grid_n": fine.n}}
    path = os.path.join(out, "splitting.json")
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
    artifacts.append(path)
    return artifacts


def _run_mayer(cfg: ExperimentConfig, out: str) -> list:
    import itertools
    from .cluster import (classify_family, diagonal_xset, lemma73_check,
                          mayer_factors, mayer_reconstruct,
                          polymer_bound_check, random_valid_xset)
    artifacts = []
    t = cfg.t_list[0]
    if not cfg.grid.contains_origin:
        raise ValueError("mayer experiment needs an odd grid (origin on grid)")
    kf = spectral_psi_field(cfg.interaction, cfg.lattice_box, cfg.grid, t,
                            dense_budget=cfg.dense_budget)
    fac = mayer_factors(kf)
    xs_d = diagonal_xset(kf.dim)
    err_d, n_subsets = mayer_reconstruct(fac, xs_d)
    xs_r = random_valid_xset(kf, 20000, seed=cfg.seed)
    err_r, _ = mayer_reconstruct(fac, xs_r)
    sites = kf.sites
    E1, E2 = {sites[0]}, {sites[-1]}
    lemma_rows = []
    boxes = fac.boxes
    for r in range(len(boxes) + 1):
        for gamma in itertools.combinations(boxes, r):
            if classify_family(gamma, E1, E2) == "NC":
                sup, scale = lemma73_check(fac, gamma, E1, E2, xs_d)
                lemma_rows.append({"family": [str(q) for q in gamma],
                                   "sup": sup, "scale": scale})
    rec = {"reconstruction": {"diag_sup_rel_err": err_d,
                              "sample_sup_rel_err": err_r,
                              "subsets": n_subsets},
           "lemma73": lemma_rows}
    path = os.path.join(out, "mayer.json")
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
    artifacts.append(path)

    eps = cfg.interaction.eps
    delta = cfg.options.get("delta", min(0.5, (eps + 1) / 2))
    T = cfg.options.get("T", 0.05)
    rows = []
    for dist in range(1, 5):
        pb = polymer_bound_check({(0,)}, {(dist,)}, eps, delta, T)
        rows.append([dist, pb.lhs, pb.rhs, pb.rhs - pb.lhs, pb.n_polymers, pb.T1])
    path = os.path.join(out, "polymer_bound.csv")
    _write_csv(path, ["distance", "lhs_sum", "rhs_bound", "margin",
                      "n_polymers", "T1"], rows)
    artifacts.append(path)
    return artifacts


def _run_correlate(cfg: ExperimentConfig, out: str) -> list:
    from .correlation import decay_sweep
    artifacts = []
    t = cfg.t_list[0]
    chain = cfg.lattice_box.n_sites
    fit = decay_sweep(cfg.interaction, chain, t, cfg.grid,
                      method=cfg.options.get("method", "auto"),
                      dense_budget=cfg.dense_budget)
    path = os.path.join(out, "decay.csv")
    _write_csv(path, ["distance", "cov", "abs_cov", "n_emp"],
               [[r["distance"], r["cov"], r["abs_cov"], r["n_emp"]]
                for r in fit.rows])
    artifacts.append(path)
    side = os.path.join(out, "decay_fit.json")
    _sidecar(side, cfg, {"delta_fit": fit.delta_fit, "r2": fit.r2,
                         "status": fit.status, "method": fit.method},
             fit.runtime_s)
    artifacts.append(side)
    return artifacts


def _run_thermo(cfg: ExperimentConfig, out: str) -> list:
    from .correlation import thermo_sweep
    artifacts = []
    t = cfg.t_list[0]
    n_max = cfg.options.get("n_max", 2)
    sweep = thermo_sweep(cfg.interaction, range(0, n_max + 1), t, cfg.grid,
                         dense_budget=cfg.dense_budget)
    path = os.path.join(out, "thermo.csv")
    _write_csv(path, ["n", "sites", "local_mean", "energy", "energy_per_site",
                      "split_defect"],
               [[r["n"], r["sites"], r["local_mean"], r["energy"],
                 r["energy_per_site"], r.get("split_defect", "")]
                for r in sweep["rows"]])
    artifacts.append(path)
    side = os.path.join(out, "thermo_status.json")
    with open(side, "w") as fh:
        json.dump({"status": sweep["status"]}, fh, indent=2, sort_keys=True)
    artifacts.append(side)
    return artifacts


# ---------------------------------------------------------------------------
# verification suites


def _verify_checks(cfg: ExperimentConfig, suite: str):
    """Yield (name, passed, value) tuples for the requested suite."""
    import itertools
    from .cluster import (diagonal_xset, group_elements, lemma73_check,
                          mayer_factors, mayer_reconstruct, classify_family,
                          polymer_bound_check)
    from .correlation import (covariance, decay_sweep, gibbs_mean, mean_energy,
                              multiplication_observable)
    from .cluster import doubled_covariance
    from .decomposition import all_terms, decay_profile, telescope_doubled, \
        telescope_single
    from .lattice import enumerate_boxes, interior_boxes, interior_count

    spec = cfg.interaction
    rng = np.random.default_rng(cfg.seed)

    if suite in ("core", "all"):
        # indicator identity behind the telescoping sum
        lam = Box((0,), (2,))
        ok = True
        boxes = enumerate_boxes(lam, lam.diam)
        for P in boxes:
            total = 0
            for Q in boxes:
                for Qp, mcount in interior_boxes(Q):
                    if Qp == P:
                        total += (-1) ** mcount
            if total != (1 if P == lam else 0):
                ok = False
        yield "indicator-identity", ok, float(ok)

        counts_ok = all(len(interior_boxes(Q)) == interior_count(Q)
                        for Q in enumerate_boxes(Box((0, 0), (2, 2)), 2))
        yield "interior-counts", counts_ok, float(counts_ok)

        C = rng.normal(size=(3, 3, 3))
        fc = lambda x: np.einsum("ijk,...i,...j,...k->...", C, x, x, x)
        xs = rng.normal(size=(4, 3))
        defect = float(np.max(np.abs(
            fc(xs) - fc(np.zeros(3)) -
            telescope_single(fc, lam, lam.sites(), xs))))
        yield "telescoping-single", defect < 1e-10, defect

        grid = GridSpec(half_width=5.0, n=9)
        kf = spectral_psi_field(spec, lam, grid, cfg.t_list[0],
                                dense_budget=cfg.dense_budget)
        terms = all_terms(kf.psi, grid, lam)
        defect = telescope_doubled(terms, kf.psi, grid, lam)
        yield "telescoping-doubled", defect < 1e-10, defect

        H = build_hamiltonian(spec, Box((0,), (1,)), GridSpec(half_width=5.0, n=8),
                              storage="dense")
        A = multiplication_observable(np.tanh, {(0,)}, H.grid)
        B = multiplication_observable(np.tanh, {(1,)}, H.grid)
        c1 = covariance(H, A, B, cfg.t_list[0])
        c2 = doubled_covariance(H, A, B, cfg.t_list[0])
        yield "covariance-doubling", abs(c1 - c2) < 1e-10, abs(c1 - c2)

        one = multiplication_observable(lambda x: np.ones_like(x), {(0,)}, H.grid)
        yield "gibbs-mean-identity", abs(gibbs_mean(H, one, cfg.t_list[0]) - 1.0) < 1e-10, \
            abs(gibbs_mean(H, one, cfg.t_list[0]) - 1.0)

    if suite in ("decay", "all"):
        grid = GridSpec(half_width=5.0, n=9)
        lam = Box((0,), (2,))
        kf = spectral_psi_field(spec, lam, grid, cfg.t_list[0],
                                dense_budget=cfg.dense_budget)
        terms = all_terms(kf.psi, grid, lam)
        rows = decay_profile(terms, spec.eps, cfg.t_list[0], spec.d)
        by_diam = {r["diam"]: r["sup_norm"] for r in rows}
        if spec.pair.J == 0.0:
            ok = all(v < 1e-8 for d_, v in by_diam.items() if d_ >= 1)
            yield "tq-decay-decoupled", ok, max(
                (v for d_, v in by_diam.items() if d_ >= 1), default=0.0)
        else:
            ratio = by_diam.get(2, 0.0) / max(by_diam.get(1, 1.0), 1e-300)
            yield "tq-decay-ratio", ratio <= 0.5, ratio

    if suite in ("cluster", "all"):
        grid = GridSpec(half_width=5.0, n=9)
        lam = Box((0,), (2,))
        kf = spectral_psi_field(spec, lam, grid, cfg.t_list[0],
                                dense_budget=cfg.dense_budget)
        fac = mayer_factors(kf)
        xs = diagonal_xset(kf.dim)
        err, _ = mayer_reconstruct(fac, xs)
        yield "mayer-reconstruction", err < 1e-6, err
        E1, E2 = {(0,)}, {(2,)}
        worst = 0.0
        for r in range(len(fac.boxes) + 1):
            for gamma in itertools.combinations(fac.boxes, r):
                if classify_family(gamma, E1, E2) == "NC":
                    sup, scale = lemma73_check(fac, gamma, E1, E2, xs)
                    worst = max(worst, sup / max(scale, 1e-300))
        yield "lemma73-cancellation", worst < 1e-10, worst
        pb = polymer_bound_check({(0,)}, {(2,)}, spec.eps,
                                 min(0.5, (spec.eps + 1) / 2), 0.05)
        yield "polymer-bound", pb.lhs <= pb.rhs, pb.rhs - pb.lhs

    if suite in ("thermo", "all"):
        H = build_hamiltonian(spec, Box((0,), (1,)), GridSpec(half_width=5.0, n=8),
                              storage="dense")
        t = cfg.t_list[0]
        w, _ = H.eigh()
        dt = 1e-4
        lnz = lambda tt: float(np.log(np.sum(np.exp(-tt * (w - w.min())))) - tt * w.min())
        fd = (lnz(t + dt) - lnz(t - dt)) / (2 * dt)
        me = mean_energy(H, t)
        yield "mean-energy-fd", abs(me - fd) < 1e-6, abs(me - fd)
        Z1 = float(np.sum(np.exp(-t * w)))
        Z2 = float(np.sum(np.exp(-2 * t * w)))
        yield "trace-monotone", Z2 < Z1, Z1 - Z2


def _run_verify(cfg: ExperimentConfig, out: str) -> tuple:
    suite = cfg.options.get("suite", "core")
    if suite not in ("core", "decay", "cluster", "thermo", "all"):
        raise ValueError(f"unknown suite {suite!r}")
    results = []
    for name, passed, value in _verify_checks(cfg, suite):
        print(f"{'PASS' if passed else 'FAIL'} {name} ({value:.3e})")
        results.append({"check": name, "passed": bool(passed), "value": value})
    path = os.path.join(out, "verify.json")
    with open(path, "w") as fh:
        json.dump({"suite": suite, "results": results}, fh, indent=2,
                  sort_keys=True)
    ok = all(r["passed"] for r in results)
    return [path], ok


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run the configured experiment; 0 on success, 1 on contract
    violation, 2 on configuration problems discovered mid-run."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "SCHEMA.md"), "w") as fh:
        fh.write(SCHEMA_TEXT)
    t0 = time.time()
    status = "ok"
    try:
        if cfg.experiment == "kernel":
            artifacts = _run_kernel(cfg, out)
        elif cfg.experiment == "decompose":
            artifacts = _run_decompose(cfg, out)
        elif cfg.experiment == "mayer":
            artifacts = _run_mayer(cfg, out)
        elif cfg.experiment == "correlate":
            artifacts = _run_correlate(cfg, out)
        elif cfg.experiment == "thermo":
            artifacts = _run_thermo(cfg, out)
        elif cfg.experiment == "verify":
            artifacts, ok = _run_verify(cfg, out)
            if not ok:
                status = "contract-violation"
        else:
            raise ValueError(f"unknown experiment {cfg.experiment!r}")
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 1
    artifacts.append(os.path.join(out, "SCHEMA.md"))
    _manifest(out, artifacts, cfg, status)
    print(f"wrote {len(artifacts)} artifacts to {out} "
          f"({time.time() - t0:.1f}s)")
    return 0 if status == "ok" else 1


DEFAULT_CONFIG = {
    "interaction": {
        "site": {"kind": "pseudo_linear_well", "a": 1.0},
        "pair": {"kind": "cosine_diff", "J": 0.1, "eps": 0.2},
        "d": 1,
    },
    "lattice": {"chain_length": 3},
    "grid": {"n": 9, "half_width": 5.0},
    "schedule": {"t": [0.1], "h": 1.0},
    "experiment": "verify",
    "output": {"directory": "out"},
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="latticeheat",
        description="heat-kernel, box-decomposition, cluster-expansion and "
                    "correlation-decay experiments on lattice Schrodinger systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("kernel", "decompose", "mayer", "correlate", "thermo", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--budget", type=int, default=None,
                       help="dense dimension budget")
        if name == "verify":
            p.add_argument("--suite", default="core",
                           choices=["core", "decay", "cluster", "thermo", "all"])
    args = parser.parse_args(argv)

    raw = DEFAULT_CONFIG if args.config is None else args.config
    if isinstance(raw, dict):
        raw = dict(raw)
        raw["experiment"] = args.command
    try:
        cfg = parse_config(raw)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    cfg.experiment = args.command
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.budget is not None:
        cfg.dense_budget = args.budget
    if args.command == "verify":
        cfg.options = dict(cfg.options)
        cfg.options["suite"] = args.suite
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
