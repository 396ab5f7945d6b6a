"""Command-line experiment runner.

``striplab run <config.json> [--out DIR] [--threads N] [--log LEVEL]`` executes
one experiment described by a JSON document and writes ``results.jsonl``,
a CSV table, an SVG plot and ``manifest.json`` into the output directory.
``striplab report <manifest.json>`` verifies the checksums and re-evaluates
the bundled checks.

Exit codes: 0 all tasks succeeded and all checks passed; 1 a task failed or a
check failed (including "no records"); 2 invalid configuration; 3 integrity
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import check_increasing, check_int, check_interval, check_real
from .errors import ConfigurationError, IntegrityError, StriplabError
from .green import (
    green_direct,
    green_via_psi,
    resonance_diameter_statistics,
    resonance_set,
    wegner_sample,
    x_matrices,
)
from .localization import correlator_decay, decay_statistics, fractional_moment_probe
from .lyapunov import estimate_spectrum, gamma_profile, ldp_tail, non_increasing, reference_gamma
from .model import EnsembleSpec, Window, assemble_finite_operator, sample_realization
from .results import ResultsStore, dumps, plot_from_csv, sha256_file, sha256_text, write_csv

log = logging.getLogger("striplab")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_INTEGRITY = 0, 1, 2, 3

EXPERIMENTS = (
    "lyapunov-spectrum",
    "ldp-tail",
    "green-oracle",
    "wegner",
    "resonance-map",
    "decay-rates",
    "correlator",
    "fractional-moment",
)

DEFAULT_TOLERANCES = {
    "lyapunov-spectrum": {"symmetry_k": 3.0, "symmetry_abs": 1e-8},
    "ldp-tail": {"monotone_k": 2.0},
    "green-oracle": {"psi_rel": 1e-6, "x_rel": 1e-6, "x_symmetry": 1e-8, "boundary_hopping": 1e-10},
    "wegner": {"monotone_k": 2.0},
    "resonance-map": {"monotone_k": 2.0},
    "decay-rates": {"rate_fraction": 0.9, "min_share": 0.9},
    "correlator": {"slope_fraction": 0.9, "bound_slack": 1e-6},
    "fractional-moment": {"bound_rel": 1e-3},
}

# keys every experiment needs in addition to experiment/ensemble/seed
_REQUIRED = {
    "lyapunov-spectrum": ("energies", "sizes", "replicas"),
    "ldp-tail": ("energies", "sizes", "replicas"),
    "green-oracle": ("energies", "sizes", "replicas"),
    "wegner": ("energies", "sizes", "replicas", "epsilon"),
    "resonance-map": ("energies", "sizes", "replicas"),
    "decay-rates": ("interval", "sizes", "replicas"),
    "correlator": ("interval", "sizes", "replicas"),
    "fractional-moment": ("interval", "sizes", "replicas"),
}

_KNOWN = {
    "experiment", "ensemble", "seed", "energies", "sizes", "replicas", "tau", "tau_fraction", "epsilon",
    "epsilon_fraction", "epsilons", "gammaW", "interval", "output_dir", "tolerances", "reorth_period",
    "burn_in", "distances", "nodes", "sites", "reference", "description",
}


# --------------------------------------------------------------------------
# configuration


def _energy_grid(spec):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return [float(spec)]
    if isinstance(spec, list):
        return [check_real(v, "energies[]") for v in spec]
    if isinstance(spec, dict):
        if "values" in spec:
            return [check_real(v, "energies.values[]") for v in spec["values"]]
        try:
            lo, hi = check_interval((spec["lo"], spec["hi"]), "energies")
            n = check_int(spec["points"], "energies.points", minimum=1)
        except KeyError as exc:
            raise ConfigurationError(f"energies: missing field {exc.args[0]!r} (need lo, hi, points)") from None
        return [lo] if n == 1 else [float(e) for e in np.linspace(lo, hi, n)]
    raise ConfigurationError("energies must be a number, a list or {lo, hi, points}")


@dataclass
class ExperimentConfig:
    """A validated experiment description (see ``docs`` in the README for the schema)."""

    experiment: str
    ensemble: EnsembleSpec
    seed: int
    energies: list = field(default_factory=list)
    sizes: list = field(default_factory=list)
    replicas: int = 1
    tau: float | None = None
    tau_fraction: float | None = None
    epsilon: float | None = None
    epsilon_fraction: float | None = None
    epsilons: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.02])
    gammaW: float | None = None
    interval: tuple | None = None
    output_dir: str | None = None
    tolerances: dict = field(default_factory=dict)
    reorth_period: int = 10
    burn_in: int | None = None
    distances: tuple = (20, 80)
    nodes: int = 24
    sites: tuple | None = None
    reference: dict = field(default_factory=lambda: {"N": 10_000, "replicas": 64})
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        unknown = sorted(set(data) - _KNOWN)
        if unknown:
            raise ConfigurationError(f"unknown config field(s): {', '.join(unknown)}")
        exp = data.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigurationError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
        if "seed" not in data:
            raise ConfigurationError("seed: required (no default seed is ever taken from the clock)")
        if "ensemble" not in data:
            raise ConfigurationError("ensemble: required")
        missing = [k for k in _REQUIRED[exp] if k not in data]
        if exp in ("ldp-tail",) and "epsilon" not in data and "epsilon_fraction" not in data:
            missing.append("epsilon or epsilon_fraction")
        if exp == "resonance-map" and "tau" not in data and "tau_fraction" not in data:
            missing.append("tau or tau_fraction")
        if missing:
            raise ConfigurationError(f"{exp}: missing field(s) {', '.join(missing)}")

        def sub(name, fn):
            try:
                return fn()
            except ConfigurationError as exc:
                raise ConfigurationError(f"{name}: {exc}") from None

        ensemble = sub("ensemble", lambda: EnsembleSpec.from_dict(data["ensemble"]))
        cfg = cls(experiment=exp, ensemble=ensemble, seed=sub("seed", lambda: check_int(data["seed"], "seed", 0)))
        cfg.raw = data
        if "energies" in data:
            cfg.energies = sub("energies", lambda: _energy_grid(data["energies"]))
        if "sizes" in data:
            cfg.sizes = sub("sizes", lambda: check_increasing(data["sizes"], "sizes"))
        if "replicas" in data:
            cfg.replicas = sub("replicas", lambda: check_int(data["replicas"], "replicas", 1))
        for key in ("tau", "tau_fraction", "epsilon", "epsilon_fraction", "gammaW"):
            if data.get(key) is not None:
                setattr(cfg, key, sub(key, lambda k=key: check_real(data[k], k, positive=True)))
        if "epsilons" in data:
            cfg.epsilons = sub("epsilons", lambda: [check_real(e, "epsilons[]", positive=True) for e in data["epsilons"]])
            if any(e >= 1 for e in cfg.epsilons):
                raise ConfigurationError("epsilons: each value must lie in (0, 1)")
        if "interval" in data:
            cfg.interval = sub("interval", lambda: check_interval(data["interval"], "interval"))
        if "reorth_period" in data:
            cfg.reorth_period = sub("reorth_period", lambda: check_int(data["reorth_period"], "reorth_period", 1))
        if data.get("burn_in") is not None:
            cfg.burn_in = sub("burn_in", lambda: check_int(data["burn_in"], "burn_in", 0))
        if "distances" in data:
            dmin, dmax = sub("distances", lambda: check_increasing(data["distances"], "distances"))
            cfg.distances = (dmin, dmax)
        if "nodes" in data:
            cfg.nodes = sub("nodes", lambda: check_int(data["nodes"], "nodes", 2))
        if "sites" in data:
            cfg.sites = tuple(sub("sites", lambda: [check_int(s, "sites[]") for s in data["sites"]]))
            if len(cfg.sites) != 2:
                raise ConfigurationError("sites: expected [x, y]")
        if "reference" in data:
            ref = data["reference"]
            cfg.reference = {
                "N": sub("reference.N", lambda: check_int(ref.get("N", 10_000), "N", 1)),
                "replicas": sub("reference.replicas", lambda: check_int(ref.get("replicas", 64), "replicas", 1)),
            }
        if "tolerances" in data:
            tol = data["tolerances"]
            known = DEFAULT_TOLERANCES[exp]
            bad = sorted(set(tol) - set(known))
            if bad:
                raise ConfigurationError(f"tolerances: unknown key(s) {', '.join(bad)} for {exp}")
            cfg.tolerances = {k: sub(f"tolerances.{k}", lambda k=k: check_real(tol[k], k, positive=True)) for k in tol}
        cfg.output_dir = data.get("output_dir")
        if exp == "ldp-tail" and len(cfg.sizes) < 2:
            raise ConfigurationError("sizes: ldp-tail needs at least two lengths")
        return cfg

    @property
    def tol(self):
        out = dict(DEFAULT_TOLERANCES[self.experiment])
        out.update(self.tolerances)
        return out

    def canonical(self):
        """Config without ``output_dir``; hashing this gives the config hash."""
        data = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return dumps(data)

    @property
    def config_hash(self):
        return sha256_text(self.canonical())[:16]


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


def task_seed(seed, index):
    """Seed for logical task ``index``; independent of worker assignment."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


# --------------------------------------------------------------------------
# experiments: each returns (tasks, finalize)


@dataclass
class Task:
    index: int
    label: dict
    fn: object


def _gamma_ref(cfg, E):
    if cfg.gammaW is not None:
        return cfg.gammaW
    return float(
        reference_gamma(cfg.ensemble, E, N=cfg.reference["N"], replicas=cfg.reference["replicas"], seed=cfg.seed)[
            cfg.ensemble.width - 1
        ]
    )


def _tasks_lyapunov(cfg):
    tasks = []
    for E in cfg.energies:
        for N in cfg.sizes:
            i = len(tasks)
            s = task_seed(cfg.seed, i)

            def fn(E=E, N=N, s=s):
                est = estimate_spectrum(cfg.ensemble, E, N, cfg.replicas, cfg.reorth_period, s, cfg.burn_in)
                rec = est.to_record()
                rec.pop("per_replica", None)
                return rec

            tasks.append(Task(i, {"E": E, "N": N}, fn))
    return tasks


def _tasks_ldp(cfg):
    tasks = []
    for i, E in enumerate(cfg.energies):
        s = task_seed(cfg.seed, i)

        def fn(E=E, s=s):
            g = _gamma_ref(cfg, E)
            eps = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_fraction * g
            return ldp_tail(cfg.ensemble, E, eps, cfg.sizes, cfg.replicas, seed=s, gamma_ref=g).to_record()

        tasks.append(Task(i, {"E": E}, fn))
    return tasks


def green_oracle_instance(spec, E, N, seed, replica_id):
    """Relative mismatches of the Psi and X formulas against the direct solve on one draw."""
    real = sample_realization(spec, Window(-N - 1, N + 1), seed, replica_id)
    H = assemble_finite_operator(real, Window(-N, N))
    direct = {
        "diag": green_direct(H, E, 0, 0).value,
        "plus": green_direct(H, E, 0, N).value,
        "minus": green_direct(H, E, 0, -N).value,
    }
    psi = green_via_psi(real, 0, N, E)
    psi_rel = max(
        float(np.linalg.norm(psi[k].value - direct[k]) / max(np.linalg.norm(direct[k]), 1e-300)) for k in direct
    )
    xr = x_matrices(real, 0, N, E)
    x_rel = float(np.linalg.norm(xr.G.value - direct["diag"]) / np.linalg.norm(direct["diag"]))
    xr_unit = x_matrices(real, 0, N, E, unit_boundary_hopping=True)
    hop = float(np.linalg.norm(xr.X_plus - xr_unit.X_plus) / max(np.linalg.norm(xr.X_plus), 1.0))
    return {"psi_rel": psi_rel, "x_rel": x_rel, "x_symmetry": max(xr.symmetry_defects), "boundary_hopping": hop}


def _tasks_green_oracle(cfg):
    tasks = []
    for E in cfg.energies:
        for N in cfg.sizes:
            i = len(tasks)
            s = task_seed(cfg.seed, i)

            def fn(E=E, N=N, s=s):
                rows = [green_oracle_instance(cfg.ensemble, E, N, s, r) for r in range(cfg.replicas)]
                out = {"kind": "green_oracle", "E": E, "N": N, "instances": len(rows)}
                for key in rows[0]:
                    out[key] = max(r[key] for r in rows)
                return out

            tasks.append(Task(i, {"E": E, "N": N}, fn))
    return tasks


def _tasks_wegner(cfg):
    tasks = []
    for i, E in enumerate(cfg.energies):
        s = task_seed(cfg.seed, i)
        tasks.append(
            Task(i, {"E": E}, lambda E=E, s=s: wegner_sample(cfg.ensemble, E, cfg.sizes, cfg.replicas, cfg.epsilon, s).to_record())
        )
    return tasks


def _tasks_resonance(cfg, gammas):
    tasks = []
    for i, E in enumerate(cfg.energies):
        s = task_seed(cfg.seed, i)
        g = gammas[E]
        tau = cfg.tau if cfg.tau is not None else cfg.tau_fraction * g

        def fn(E=E, s=s, g=g, tau=tau):
            st = resonance_diameter_statistics(cfg.ensemble, tau, E, cfg.sizes, cfg.replicas, g, s)
            rec = st.to_record()
            # site map of the first replica at the largest N, for plotting
            N = cfg.sizes[-1]
            half = N * N
            real = sample_realization(cfg.ensemble, Window(-half - N, half + N), s, 0)
            rep = resonance_set(real, tau, E, N, Window(-half, half), g)
            rec["map"] = {"N": N, "resonant_sites": rep.resonant_sites, "window": [-half, half]}
            return rec

        tasks.append(Task(i, {"E": E}, fn))
    return tasks


def _profile(cfg):
    lo, hi = cfg.interval
    tau = 0.1 * cfg.tau if cfg.tau else 0.01
    return gamma_profile(cfg.ensemble, lo, hi, tau, N=cfg.reference["N"], replicas=16, seed=cfg.seed)


def _tasks_decay(cfg):
    tasks = []
    for i, L in enumerate(cfg.sizes):
        s = task_seed(cfg.seed, i)

        def fn(L=L, s=s):
            prof = _profile(cfg)
            st = decay_statistics(cfg.ensemble, prof, cfg.interval, L, cfg.replicas, s, cfg.tol["rate_fraction"])
            rec = st.to_record()
            rec["energies"] = st.energies
            rec["rates"] = st.rates
            rec["gamma"] = st.gamma
            return rec

        tasks.append(Task(i, {"box_length": L}, fn))
    return tasks


def _tasks_correlator(cfg):
    tasks = []
    for i, L in enumerate(cfg.sizes):
        s = task_seed(cfg.seed, i)

        def fn(L=L, s=s):
            prof = _profile(cfg)
            cd = correlator_decay(cfg.ensemble, cfg.interval, L, cfg.replicas, s, *cfg.distances)
            rec = cd.to_record()
            rec["gamma_inf"] = prof.inf(*cfg.interval)
            rec["width"] = cfg.ensemble.width
            return rec

        tasks.append(Task(i, {"box_length": L}, fn))
    return tasks


def _tasks_fractional(cfg):
    tasks = []
    for N in cfg.sizes:
        for r in range(cfg.replicas):
            i = len(tasks)
            s = task_seed(cfg.seed, i)

            def fn(N=N, s=s):
                box = Window(-N, N)
                H = assemble_finite_operator(sample_realization(cfg.ensemble, box, s, 0), box)
                x, y = cfg.sites if cfg.sites else (0, min(N, 5))
                res = fractional_moment_probe(H, cfg.interval, x, y, cfg.epsilons, cfg.nodes)
                rec = res.to_record()
                rec.update({"N": N, "x": x, "y": y, "width": cfg.ensemble.width})
                return rec

            tasks.append(Task(i, {"N": N, "replica": r}, fn))
    return tasks


def build_tasks(cfg):
    """Validate experiment-level preconditions and list the tasks."""
    exp = cfg.experiment
    if exp == "lyapunov-spectrum":
        return _tasks_lyapunov(cfg)
    if exp == "ldp-tail":
        return _tasks_ldp(cfg)
    if exp == "green-oracle":
        return _tasks_green_oracle(cfg)
    if exp == "wegner":
        return _tasks_wegner(cfg)
    if exp == "resonance-map":
        gammas = {E: _gamma_ref(cfg, E) for E in cfg.energies}
        for E, g in gammas.items():
            tau = cfg.tau if cfg.tau is not None else cfg.tau_fraction * g
            if tau >= g:
                raise ConfigurationError(f"tau: {tau:.6g} must be below gamma_W = {g:.6g} at E = {E}")
        return _tasks_resonance(cfg, gammas)
    if exp == "decay-rates":
        return _tasks_decay(cfg)
    if exp == "correlator":
        return _tasks_correlator(cfg)
    return _tasks_fractional(cfg)


# --------------------------------------------------------------------------
# bundled checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _nan(v):
    return float("nan") if v is None else float(v)


def evaluate_checks(experiment, records, tol):
    """Pass/fail verdicts for the records of one run (thresholds echoed in ``detail``)."""
    data = [r for r in records if r.get("kind") != "task_error"]
    errors = [r for r in records if r.get("kind") == "task_error"]
    out = []
    if errors:
        out.append(CheckResult("tasks", False, f"{len(errors)} task(s) failed"))
    if not data:
        out.append(CheckResult("records", False, "no records"))
        return out
    if experiment == "lyapunov-spectrum":
        k, eps = tol["symmetry_k"], tol["symmetry_abs"]
        for r in data:
            g = np.array([_nan(v) for v in r["exponents"]])
            se = np.array([_nan(v) for v in r["stderr"]])
            sums = np.abs(g + g[::-1])
            comb = np.hypot(se, se[::-1])
            allowed = np.where(np.isfinite(comb), k * comb, 0.0) + eps
            ok = bool(np.all(sums <= allowed))
            out.append(
                CheckResult(
                    f"symmetry E={r['E']:g} N={r['N']}",
                    ok,
                    f"exponents {np.round(g, 6).tolist()}; max |g_j + g_(2W+1-j)| = {sums.max():.3g} "
                    f"(threshold {k:g} combined stderr + {eps:g})",
                )
            )
    elif experiment == "ldp-tail":
        for r in data:
            p = np.array(r["tail_prob"])
            se = np.array(r["stderr"])
            mono = non_increasing(p, se, tol["monotone_k"])
            rate = _nan(r["rate"])
            neg = (rate > 0) if not r["rate_is_bound"] else (p[-1] < p[0])
            out.append(CheckResult(f"tail non-increasing (epsilon={r['epsilon']:g})", mono, f"p = {np.round(p, 4).tolist()} (within {tol['monotone_k']:g} stderr)"))
            out.append(CheckResult("log-tail slope negative", bool(neg), f"fitted rate {rate:.4g} (bound only: {r['rate_is_bound']})"))
    elif experiment == "green-oracle":
        for key in ("psi_rel", "x_rel", "x_symmetry", "boundary_hopping"):
            worst = max(_nan(r[key]) for r in data)
            out.append(CheckResult(key, bool(worst <= tol[key]), f"max {worst:.3g} (threshold {tol[key]:g})"))
    elif experiment in ("wegner", "resonance-map"):
        key = "frequency" if experiment == "wegner" else "probability"
        for r in data:
            p = np.array(r[key])
            se = np.array(r["stderr"])
            ok = non_increasing(p, se, tol["monotone_k"])
            out.append(CheckResult(f"{key} non-increasing in N (E={r['E']:g})", ok, f"{np.round(p, 4).tolist()} at N={r['Ns']} (within {tol['monotone_k']:g} stderr)"))
            if experiment == "resonance-map":
                drop = bool(p[-1] < p[0] - tol["monotone_k"] * np.hypot(se[0], se[-1]))
                out.append(CheckResult(f"probability decreases overall (E={r['E']:g})", drop, f"{p[0]:.4g} -> {p[-1]:.4g}"))
    elif experiment == "decay-rates":
        for r in data:
            frac = _nan(r["fraction"])
            out.append(
                CheckResult(
                    f"decay rates box={r['box_length']}",
                    bool(frac >= tol["min_share"]),
                    f"share with rate >= {tol['rate_fraction']:g} gamma_W: {frac:.3f} over {r['n_interior']} interior pairs "
                    f"(threshold {tol['min_share']:g})",
                )
            )
    elif experiment == "correlator":
        for r in data:
            thr = -tol["slope_fraction"] * _nan(r["gamma_inf"])
            slope = _nan(r["median_slope"])
            out.append(CheckResult(f"correlator slope box={r['box_length']}", bool(slope <= thr), f"median slope {slope:.4g} (threshold {thr:.4g})"))
            bound = r["width"] + tol["bound_slack"]
            out.append(CheckResult("correlator bound", bool(_nan(r["max_value"]) <= bound), f"max value {_nan(r['max_value']):.4g} (threshold {bound:g})"))
    elif experiment == "fractional-moment":
        worst = max(max(_nan(v) for v in r["values"]) / r["width"] for r in data)
        lim = 1 + tol["bound_rel"]
        out.append(CheckResult("fractional-moment bound", bool(worst <= lim), f"max value / W = {worst:.4g} (threshold {lim:g})"))
    return out


# --------------------------------------------------------------------------
# tables and plots


def _write_tables(cfg, records, out_dir):
    exp = cfg.experiment
    data = [r for r in records if r.get("kind") != "task_error"]
    csv_path, svg_path = out_dir / f"{exp}.csv", out_dir / f"{exp}.svg"
    if exp == "lyapunov-spectrum":
        rows = [(r["E"], r["N"], j + 1, g, se) for r in data for j, (g, se) in enumerate(zip(r["exponents"], r["stderr"]))]
        write_csv(csv_path, ["E", "N", "j", "gamma", "stderr"], rows)
        plot_from_csv(csv_path, svg_path, "E", ["gamma"], "j", title="Lyapunov spectrum", xlabel="E", ylabel="gamma_j")
    elif exp == "ldp-tail":
        rows = [(r["epsilon"], n, p, se) for r in data for n, p, se in zip(r["Ns"], r["tail_prob"], r["stderr"])]
        write_csv(csv_path, ["epsilon", "N", "tail_prob", "stderr"], rows)
        plot_from_csv(csv_path, svg_path, "N", ["tail_prob"], "epsilon", title="Large-deviation tail", xlabel="N", ylabel="probability", logy=True)
    elif exp == "green-oracle":
        rows = [(r["E"], r["N"], r["psi_rel"], r["x_rel"], r["x_symmetry"], r["boundary_hopping"]) for r in data]
        write_csv(csv_path, ["E", "N", "psi_rel", "x_rel", "x_symmetry", "boundary_hopping"], rows)
        plot_from_csv(csv_path, svg_path, "N", ["psi_rel", "x_rel", "x_symmetry"], title="Green-function oracle mismatch", xlabel="N", ylabel="relative error", logy=True)
    elif exp == "wegner":
        rows = [(r["E"], n, p, se) for r in data for n, p, se in zip(r["Ns"], r["frequency"], r["stderr"])]
        write_csv(csv_path, ["E", "N", "frequency", "stderr"], rows)
        plot_from_csv(csv_path, svg_path, "N", ["frequency"], "E", title="Wegner exceedance frequency", xlabel="N", ylabel="frequency", logy=True)
    elif exp == "resonance-map":
        rows = []
        for r in data:
            res = set(r["map"]["resonant_sites"])
            lo, hi = r["map"]["window"]
            rows.extend((x, r["E"], int(x in res)) for x in range(lo, hi + 1))
        write_csv(csv_path, ["site", "E", "resonant"], rows)
        prob_rows = [(r["E"], n, p) for r in data for n, p in zip(r["Ns"], r["probability"])]
        write_csv(out_dir / "resonance-diameter.csv", ["E", "N", "probability"], prob_rows)
        plot_from_csv(out_dir / "resonance-diameter.csv", svg_path, "N", ["probability"], "E", title="P{diam Res > 2N}", xlabel="N", ylabel="probability")
    elif exp == "decay-rates":
        rows = [(r["box_length"], e, rate, g) for r in data for e, rate, g in zip(r["energies"], r["rates"], r["gamma"])]
        write_csv(csv_path, ["box_length", "energy", "decay_rate", "gamma_W"], rows)
        plot_from_csv(csv_path, svg_path, "energy", ["decay_rate", "gamma_W"], title="Eigenfunction decay rates", xlabel="energy", ylabel="rate")
    elif exp == "correlator":
        rows = []
        for r in data:
            dmin, dmax = r["distances"]
            rows.extend((r["box_length"], d, q) for d, q in zip(range(dmin, dmax + 1), r["median_profile"]))
        write_csv(csv_path, ["box_length", "distance", "median_correlator"], rows)
        plot_from_csv(csv_path, svg_path, "distance", ["median_correlator"], "box_length", title="Eigenfunction correlator", xlabel="|x - y|", ylabel="Q", logy=True)
    else:
        rows = [(r["N"], e, v) for r in data for e, v in zip(r["epsilons"], r["values"])]
        write_csv(csv_path, ["N", "epsilon", "value"], rows)
        plot_from_csv(csv_path, svg_path, "epsilon", ["value"], "N", title="Fractional-moment probe", xlabel="epsilon", ylabel="value")
    extra = [out_dir / "resonance-diameter.csv"] if exp == "resonance-map" else []
    return [csv_path, svg_path, *extra]


# --------------------------------------------------------------------------
# run / report


def resolve_threads(threads):
    if threads is not None:
        return check_int(threads, "threads", 1)
    env = os.environ.get("STRIPLAB_THREADS")
    if env:
        try:
            return check_int(int(env), "STRIPLAB_THREADS", 1)
        except ValueError:
            raise ConfigurationError(f"STRIPLAB_THREADS must be a positive integer, got {env!r}") from None
    return 1


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(cfg, out_dir=None, threads=None):
    """Execute an experiment; returns ``(manifest_dict, exit_code)``."""
    threads = resolve_threads(threads)
    out_dir = Path(out_dir or cfg.output_dir or "striplab-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    tasks = build_tasks(cfg)
    log.info("%s: %d task(s) on %d thread(s)", cfg.experiment, len(tasks), threads)

    def execute(task):
        try:
            rec = task.fn()
        except StriplabError as exc:
            log.warning("task %d failed: %s", task.index, exc)
            rec = {"kind": "task_error", "error": f"{type(exc).__name__}: {exc}"}
        rec = dict(rec)
        rec["task"] = task.index
        rec["task_seed"] = task_seed(cfg.seed, task.index)
        rec["experiment"] = cfg.experiment
        rec.update({f"task_{k}": v for k, v in task.label.items()})
        return rec

    with ThreadPoolExecutor(max_workers=threads) as pool:
        records = list(pool.map(execute, tasks))  # map preserves task order

    results_path = out_dir / "results.jsonl"
    results_path.unlink(missing_ok=True)
    store = ResultsStore(results_path, cfg.config_hash)
    for rec in records:
        store.append(rec)
    stored = ResultsStore.read(results_path)
    outputs = _write_tables(cfg, stored, out_dir)
    checks = evaluate_checks(cfg.experiment, stored, cfg.tol)
    failed = any(r.get("kind") == "task_error" for r in stored) or not all(c.passed for c in checks)
    code = EXIT_FAILED if failed else EXIT_OK
    manifest = {
        "schema_version": 1,
        "artifact_version": __version__,
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash,
        "config": cfg.raw,
        "tolerances": cfg.tol,
        "started": started,
        "finished": _now(),
        "threads": threads,
        "task_seeds": [task_seed(cfg.seed, t.index) for t in tasks],
        "results": {"path": results_path.name, "sha256": sha256_file(results_path), "line_sha256": store.line_checksums},
        "outputs": [{"path": p.name, "sha256": sha256_file(p)} for p in outputs],
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
        "exit_code": code,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for c in checks:
        log.info(c.line())
    return manifest, code


def verify_outputs(manifest_path):
    """Check every file listed in a manifest; returns ``(manifest, records)``."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"cannot read manifest {manifest_path}: {exc}") from None
    base = manifest_path.parent
    res = manifest["results"]
    path = base / res["path"]
    if not path.exists():
        raise IntegrityError(f"results file {path} is missing")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not any(line.strip() for line in lines):
        # an empty results file is reported as a "no records" verdict, not as tampering
        return manifest, []
    expected = res["line_sha256"]
    for n, line in enumerate(lines, start=1):
        if n > len(expected) or sha256_text(line) != expected[n - 1]:
            raise IntegrityError(f"{path.name} line {n} does not match its recorded checksum")
    if len(lines) != len(expected):
        raise IntegrityError(f"{path.name} has {len(lines)} lines, manifest lists {len(expected)}")
    for item in manifest["outputs"]:
        p = base / item["path"]
        if not p.exists() or sha256_file(p) != item["sha256"]:
            raise IntegrityError(f"output {item['path']} is missing or altered")
    records = [json.loads(line) for line in lines if line.strip()]
    return manifest, records


def report(manifest_path, stream=None):
    """Print a summary of a finished run; returns the exit code."""
    stream = stream or sys.stdout
    manifest, records = verify_outputs(manifest_path)
    exp = manifest["experiment"]
    print(f"experiment: {exp}  config {manifest['config_hash']}  version {manifest['artifact_version']}", file=stream)
    print(f"records: {len(records)}", file=stream)
    if exp == "lyapunov-spectrum":
        for r in records:
            if r.get("kind") == "task_error":
                continue
            ex = ", ".join(f"{g:.6f}" if g is not None else "nan" for g in r["exponents"])
            print(f"  E={r['E']:g} N={r['N']} replicas={r['replicas']}: [{ex}]", file=stream)
    checks = evaluate_checks(exp, records, manifest["tolerances"])
    for c in checks:
        print(c.line(), file=stream)
    ok = bool(records) and all(c.passed for c in checks)
    print("verdict: " + ("PASS" if ok else ("no records" if not records else "FAIL")), file=stream)
    return EXIT_OK if ok else EXIT_FAILED


def main(argv=None):
    parser = argparse.ArgumentParser(prog="striplab", description="Random block-Schrodinger operators on strips: experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p_run.add_argument("--threads", type=int, default=None, help="worker threads (fallback: STRIPLAB_THREADS, then 1)")
    p_run.add_argument("--log", default="WARNING", help="log level")
    p_rep = sub.add_parser("report", help="verify and summarise a finished run")
    p_rep.add_argument("manifest")
    p_rep.add_argument("--log", default="WARNING")
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log).upper(), logging.WARNING), format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            manifest, code = run(cfg, args.out, args.threads)
            for c in manifest["checks"]:
                print(("[PASS] " if c["passed"] else "[FAIL] ") + f"{c['name']}: {c['detail']}")
            return code
        return report(args.manifest)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
