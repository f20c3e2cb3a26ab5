"""Experiment configuration: strict JSON schema with exhaustive validation.

Physics parameters are never defaulted silently; numerical plumbing (grid
sizes, budgets, output formats) is. Unknown keys are rejected and all
violations are reported together, not just the first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .hamiltonian import GridSpec
from .interaction import (InteractionSpec, PairCouplingSpec,
                          SitePotentialSpec, PAIR_KINDS, SITE_KINDS)
from .lattice import Box

EXPERIMENTS = ("kernel", "decompose", "mayer", "correlate", "thermo", "verify")
SUITES = ("core", "decay", "cluster", "thermo", "all")
FORMATS = ("csv", "json")


@dataclass
class ExperimentConfig:
    interaction: InteractionSpec
    lattice_box: Box
    grid: GridSpec
    t_list: list
    h: float
    theta_grid: list
    experiment: str
    out_dir: str
    formats: tuple
    dense_budget: int = 5000
    sparse_budget: int = 1_000_000
    seed: int = 0
    options: dict = field(default_factory=dict)


class ConfigError(Exception):
    """Carries every violation found, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))


def _check_keys(obj: dict, allowed, path: str, errors: list):
    for key in obj:
        if key not in allowed:
            errors.append(f"{path}: unknown key {key!r}")


def _require(obj: dict, key: str, path: str, errors: list):
    if key not in obj:
        errors.append(f"{path}: missing required key {key!r}")
        return None
    return obj[key]


def parse_config(path_or_dict) -> ExperimentConfig:
    """Validate and build an ExperimentConfig; raises ConfigError listing
    every violation."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict) as fh:
            raw = json.load(fh)
    errors: list = []
    _check_keys(raw, {"interaction", "lattice", "grid", "schedule",
                      "experiment", "output", "budget", "seed", "options"},
                "config", errors)

    # interaction
    inter = _require(raw, "interaction", "config", errors) or {}
    _check_keys(inter, {"site", "pair", "d"}, "interaction", errors)
    site_cfg = inter.get("site", {"kind": "zero"})
    pair_cfg = inter.get("pair", {"kind": "zero"})
    _check_keys(site_cfg, {"kind", "c", "k", "a", "omega"}, "interaction.site", errors)
    _check_keys(pair_cfg, {"kind", "J", "eps"}, "interaction.pair", errors)
    d = inter.get("d", 1)
    site = pair = None
    if site_cfg.get("kind", "zero") not in SITE_KINDS:
        errors.append(f"interaction.site.kind: unknown kind {site_cfg.get('kind')!r}")
    else:
        site = SitePotentialSpec(**site_cfg)
    pk = pair_cfg.get("kind", "zero")
    if pk not in PAIR_KINDS:
        errors.append(f"interaction.pair.kind: unknown kind {pk!r}")
    else:
        try:
            pair = PairCouplingSpec(**pair_cfg)
        except ValueError as exc:
            errors.append(f"interaction.pair: {exc}")

    # schedule
    sched = _require(raw, "schedule", "config", errors) or {}
    _check_keys(sched, {"t", "h", "theta"}, "schedule", errors)
    t_list = _require(sched, "t", "schedule", errors) or []
    if not isinstance(t_list, list):
        t_list = [t_list]
    for tv in t_list:
        if not (isinstance(tv, (int, float)) and tv > 0):
            errors.append(f"schedule.t: every t must be > 0, got {tv!r}")
    h = _require(sched, "h", "schedule", errors)
    if h is not None and (not isinstance(h, (int, float)) or h <= 0):
        errors.append(f"schedule.h: must be > 0, got {h!r}")
    theta = sched.get("theta", [0.0, 0.5, 1.0])

    spec = None
    if site is not None and pair is not None and h and not errors:
        try:
            spec = InteractionSpec(site=site, pair=pair, d=d, h=float(h))
        except ValueError as exc:
            errors.append(f"interaction: {exc}")

    # lattice
    lat = _require(raw, "lattice", "config", errors) or {}
    _check_keys(lat, {"chain_length", "box", "d"}, "lattice", errors)
    box = None
    if "chain_length" in lat:
        L = lat["chain_length"]
        if not (isinstance(L, int) and L >= 1):
            errors.append(f"lattice.chain_length: need integer >= 1, got {L!r}")
        else:
            box = Box((0,), (L - 1,))
    elif "box" in lat:
        b = lat["box"]
        _check_keys(b, {"lo", "hi"}, "lattice.box", errors)
        try:
            box = Box(tuple(b["lo"]), tuple(b["hi"]))
        except (KeyError, ValueError, TypeError) as exc:
            errors.append(f"lattice.box: {exc}")
    else:
        errors.append("lattice: need chain_length or box")

    # grid (numerical plumbing: defaults allowed)
    gr = raw.get("grid", {})
    _check_keys(gr, {"n", "half_width", "interior_margin"}, "grid", errors)
    try:
        grid = GridSpec(half_width=gr.get("half_width", 6.0),
                        n=gr.get("n", 32),
                        interior_margin=gr.get("interior_margin"))
    except ValueError as exc:
        errors.append(f"grid: {exc}")
        grid = None

    # experiment
    exp = _require(raw, "experiment", "config", errors)
    if exp is not None and exp not in EXPERIMENTS:
        errors.append(f"experiment: unknown experiment {exp!r}; "
                      f"choose from {EXPERIMENTS}")

    # output
    out = raw.get("output", {})
    _check_keys(out, {"directory", "formats"}, "output", errors)
    out_dir = out.get("directory", "out")
    formats = tuple(out.get("formats", ["csv", "json"]))
    for f in formats:
        if f not in FORMATS:
            errors.append(f"output.formats: unknown format {f!r}")

    # budgets
    bud = raw.get("budget", {})
    _check_keys(bud, {"dense", "sparse"}, "budget", errors)
    dense_budget = bud.get("dense", 5000)
    sparse_budget = bud.get("sparse", 1_000_000)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append(f"seed: must be an integer, got {seed!r}")
    options = raw.get("options", {})
    if not isinstance(options, dict):
        errors.append("options: must be an object")

    # referential validity before any compute
    if grid is not None and box is not None and exp in ("kernel", "decompose",
                                                        "mayer", "thermo"):
        dim = grid.n ** box.n_sites
        if dim > dense_budget:
            errors.append(f"budget: dense dimension {dim} = {grid.n}^"
                          f"{box.n_sites} exceeds dense budget {dense_budget}")
    if grid is not None and box is not None and exp == "correlate":
        dim = grid.n ** box.n_sites
        method = options.get("method", "auto")
        if method == "dense" and dim > dense_budget:
            errors.append(f"budget: dense dimension {dim} exceeds dense "
                          f"budget {dense_budget}")
        if dim > sparse_budget:
            errors.append(f"budget: dimension {dim} exceeds sparse budget "
                          f"{sparse_budget}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(interaction=spec, lattice_box=box, grid=grid,
                            t_list=[float(tv) for tv in t_list], h=float(h),
                            theta_grid=[float(v) for v in theta],
                            experiment=exp, out_dir=out_dir, formats=formats,
                            dense_budget=int(dense_budget),
                            sparse_budget=int(sparse_budget), seed=seed,
                            options=dict(options))
