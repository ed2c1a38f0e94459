"""Experiment orchestration: solve a family, run the analyses, write artifacts.

Payload files (CSV, JSON summary, binary fields) depend only on the config
and are byte-identical across re-runs; wall-clock timings live in the
manifest alone.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .barrier import (BarrierParams, barrier_f, barrier_u, model_section, verify_c0)
from .checks import (CheckResult, annulus_oracle_check, brute_force_battery, comparison_battery,
                     identity_density_check, max_principle_battery)
from .config import ExperimentConfig, load_config
from .decay import envelope_constant, fit_decay, reference_rate
from .geometry import PoleSpec, background_form, build_torus_fiber, family, integrate
from .io import read_csv, write_csv, write_field
from .pluripotential import (away_from, disk_region, localized_mass, ma_measure,
                             random_psh_candidates, sublevel_volume, verify_capacity_energy,
                             verify_mass_capacity, weighted_sublevel)
from .solver import SolverOptions, continuation_solve
from .wp import continuity_scan, fiber_diagnostics, log_integral, wp_potential

log = logging.getLogger(__name__)

__all__ = [
    "RunManifest",
    "RunResult",
    "NumericalFailure",
    "build_family",
    "analyze",
    "run_experiment",
    "verify_suite",
    "report",
    "DECAY_COLUMNS",
    "WP_COLUMNS",
]

DECAY_COLUMNS = ("t", "m", "K", "volume", "weighted_volume", "bound_rhs", "slack")
CAPACITY_COLUMNS = ("t", "K", "mass", "chain_bound", "chain_slack", "boundary_gap",
                    "energy_rhs", "energy_lower_bound", "energy_margin")
BARRIER_COLUMNS = ("t", "eps", "delta", "C_eps", "witness_i", "witness_j", "h_prime_max",
                   "refinement_ratio")
FIBER_COLUMNS = ("t", "status", "n_iter", "residual", "conservation", "min_phi", "max_phi")
LOCALIZED_COLUMNS = ("t", "radius", "mass")


def WP_COLUMNS(n):
    return ("t",) + tuple(f"A_{j}" for j in range(n + 1)) + (
        "psi_wp", "I", "sup_phi", "sup_trace", "sup_grad")


class NumericalFailure(RuntimeError):
    """A run could not produce a required analysis input."""


@dataclass
class RunManifest:
    config_hash: str
    version: str
    fibers: list
    timing: dict
    files: list

    def as_dict(self):
        return {"config_hash": self.config_hash, "tool_version": self.version,
                "fibers": self.fibers, "timing": self.timing, "files": self.files}


@dataclass
class RunResult:
    out_dir: Path
    checks: list
    manifest: RunManifest
    summary: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self):
        return 0 if self.passed else 1


# ------------------------------------------------------------------ building blocks

def _centers(cfg):
    n = cfg.model.n
    return [tuple(complex(c[2 * k], c[2 * k + 1]) for k in range(n)) for c in cfg.poles.centers]


def build_family(cfg: ExperimentConfig, N: Optional[int] = None):
    """Fiber grid, background form and family described by ``cfg``."""
    m = cfg.model
    if m.chart != "torus":
        raise ValueError("family experiments run on torus charts; "
                         "use oracle-check for the annulus")
    N = m.N if N is None else N
    fiber = build_torus_fiber(m.n, complex(*m.tau), N)
    form = background_form(fiber, m.form, volume=m.volume)
    poles = PoleSpec(_centers(cfg), cfg.poles.exponents)
    f = cfg.family
    fam = family(fiber, form, poles, t_max=f.t_max, ratio=f.ratio, M=f.M,
                 append_zero=f.append_zero, normalize=f.normalize)
    return fam


def _options(cfg):
    s = cfg.solver
    return SolverOptions(tol=s.tol, max_iter=s.max_iter, armijo=s.armijo,
                         linear_tol=s.linear_tol, ladder=s.ladder,
                         preconditioner=s.preconditioner)


def _fiber_analysis(cfg, fam, res, candidates):
    """All per-fiber quantities for one solved fiber."""
    form, fiber, phi = fam.form, fam.fiber, res.potential
    n, V = fiber.n, form.volume
    a = cfg.analysis
    centers = _centers(cfg)
    out = {"t": abs(res.t)}
    dens = fam.density(res.t)
    out["conservation"] = abs(integrate(np.exp(phi.values) * dens.values, fiber.dA) - V) / V
    out["mass"] = [abs(ma_measure(phi, form, m).total - V) / V for m in range(n + 1)]
    decay = {}
    for m in a.m_list:
        mu = ma_measure(phi, form, m)
        decay[m] = ([sublevel_volume(phi, mu, K) for K in a.K_grid],
                    [weighted_sublevel(phi, mu, K) for K in a.K_grid])
    out["decay"] = decay
    mu_top = ma_measure(phi, form, n)
    out["localized"] = [localized_mass(mu_top, disk_region(centers, r)) for r in a.localized_radii]
    if n == 1 and fiber.tau.real == 0.0:
        cap = []
        for K in a.capacity_K:
            mc = verify_mass_capacity(phi, form, K)
            ec = verify_capacity_energy(phi, form, K)
            rc = verify_capacity_energy(phi, form, K, candidates=candidates) if candidates else ec
            cap.append((K, mc, ec, rc))
        out["capacity"] = cap
    barrier = []
    for eps in a.eps:
        for delta in a.delta:
            p = BarrierParams(eps, delta, n)
            sigma = model_section(fiber, centers, res.t)
            f = barrier_f(barrier_u(sigma, p), p)
            barrier.append((p, verify_c0(phi, f, p), f.h_prime_max, f.strict))
    out["barrier"] = barrier
    sigma = model_section(fiber, centers, res.t)
    I = log_integral(sigma, form)
    region = away_from(centers, a.diagnostics_radius)
    diag = fiber_diagnostics(phi, form, region)
    out["wp"] = wp_potential(phi, form, I=I, diagnostics=diag)
    return out


def _solve_and_analyze(cfg, N, threads, seed):
    fam = build_family(cfg, N)
    results = continuation_solve(fam, _options(cfg))
    candidates = None
    if fam.fiber.n == 1 and fam.fiber.tau.real == 0.0 and cfg.analysis.random_candidates:
        candidates = random_psh_candidates(fam.form, cfg.analysis.random_candidates, seed)
    ok = [r for r in results if r.ok]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            analyses = list(pool.map(lambda r: _fiber_analysis(cfg, fam, r, candidates), ok))
    else:
        analyses = [_fiber_analysis(cfg, fam, r, candidates) for r in ok]
    return fam, results, analyses


def analyze(cfg: ExperimentConfig, threads: int = 1):
    """Solve the configured family (and its refinement) and evaluate invariants.

    Returns ``(family, results, analyses, refined, checks, summary)``.
    """
    refine_N = cfg.analysis.refine_N
    if refine_N is not None and threads > 1:
        with ThreadPoolExecutor(2) as pool:
            base_f = pool.submit(_solve_and_analyze, cfg, None, threads, cfg.seed)
            ref_f = pool.submit(_solve_and_analyze, cfg, refine_N, 1, cfg.seed)
            base, refined = base_f.result(), ref_f.result()
    else:
        base = _solve_and_analyze(cfg, None, threads, cfg.seed)
        refined = _solve_and_analyze(cfg, refine_N, threads, cfg.seed) if refine_N else None
    fam, results, analyses = base
    checks, summary = _family_checks(cfg, fam, results, analyses, refined)
    return fam, results, analyses, refined, checks, summary


def _rel_spread(values):
    values = [v for v in values if math.isfinite(v)]
    if not values:
        return math.nan
    top = max(abs(v) for v in values)
    return (max(values) - min(values)) / top if top > 0 else 0.0


def _family_checks(cfg, fam, results, analyses, refined):
    n, V = fam.fiber.n, fam.volume
    N = fam.fiber.resolution
    a = cfg.analysis
    tol_grid = 10.0 * N ** -2 * V
    checks = []
    failed = [r for r in results if not r.ok]
    checks.append(CheckResult("all_fibers_solved", not failed, float(len(failed)), 0.0,
                              "; ".join(f"t={abs(r.t):.6g}: {r.error}" for r in failed)))
    if not analyses:
        return checks, {"fibers": 0}
    cons = max(x["conservation"] for x in analyses)
    checks.append(CheckResult("conservation", cons < 1e-8, cons, 1e-8))
    mass = max(max(x["mass"]) for x in analyses)
    checks.append(CheckResult("mass_invariance", mass < 1e-6, mass, 1e-6))

    # decay: a single envelope constant per family and level set weighting
    K = np.asarray(a.K_grid)
    decay_summary = {}
    for m in a.m_list:
        vols = [x["decay"][m][0] for x in analyses]
        wvols = [x["decay"][m][1] for x in analyses]
        C_fit = max(envelope_constant(K, v, n, reference_rate(n)) for v in vols)
        C_w = max(envelope_constant(K, w, 0, reference_rate(n, True)) for w in wvols)
        mono = all(all(b <= c for c, b in zip(v, v[1:])) for v in vols)
        fits = [fit_decay(K, v, n, V=V) for v in vols]
        decay_summary[str(m)] = {
            "C_fit": C_fit, "C_weighted": C_w, "monotone": mono,
            "nonzero_fibers": sum(1 for v in vols if any(x > 0 for x in v)),
            "fitted_rates": [f.r if f.conclusive else None for f in fits],
        }
        checks.append(CheckResult(f"decay_bound_m{m}", math.isfinite(C_fit) and mono, C_fit,
                                  math.inf, "v(K) <= C_fit K^n exp(-K/(4n+2)) on the K-grid"))
        checks.append(CheckResult(f"weighted_decay_bound_m{m}", math.isfinite(C_w), C_w, math.inf,
                                  "w(K) <= C exp(-K/(4n+4)) on the K-grid"))

    cap_rows = [c for x in analyses for c in x.get("capacity", [])]
    if cap_rows:
        chain = min(mc.min_slack for _, mc, _, _ in cap_rows)
        energy = min(min(ec.margin, rc.margin) for _, _, ec, rc in cap_rows)
        checks.append(CheckResult("mass_capacity_chain", chain >= -tol_grid, chain, -tol_grid))
        checks.append(CheckResult("capacity_energy_bound", energy >= -tol_grid, energy, -tol_grid))
    capacity_note = ("evaluated" if cap_rows else
                     "skipped: capacity bounds run on n=1 rectangular tori only")

    # barrier: H' < 1 and uniformity of C_eps across t (and refinement)
    barrier_summary = []
    ref_C = {}
    if refined is not None:
        for x in refined[2]:
            for p, rep, _, _ in x["barrier"]:
                ref_C[(x["t"], p.eps, p.delta)] = rep.C_eps
    for p in {(b[0].eps, b[0].delta) for x in analyses for b in x["barrier"]}:
        Cs, strict, drift, hmax_all = [], True, [], -math.inf
        for x in analyses:
            for bp, rep, hmax, st in x["barrier"]:
                if (bp.eps, bp.delta) != p:
                    continue
                Cs.append(rep.C_eps)
                strict &= st or not bp.eps < n
                hmax_all = max(hmax_all, hmax)
                key = (x["t"], bp.eps, bp.delta)
                if key in ref_C:
                    drift.append(abs(rep.C_eps - ref_C[key]) / abs(ref_C[key]))
        spread = _rel_spread(Cs)
        name = f"eps={p[0]:g},delta={p[1]:g}"
        checks.append(CheckResult(f"barrier_h_prime_{name}", strict, float(hmax_all), 1.0,
                                  "max H'(-u) over the composition range; must stay < 1"))
        checks.append(CheckResult(f"barrier_uniform_in_t_{name}", spread < 0.10, spread, 0.10))
        if drift:
            checks.append(CheckResult(f"barrier_refinement_{name}", max(drift) < 0.05,
                                      max(drift), 0.05))
        barrier_summary.append({"eps": p[0], "delta": p[1], "t_spread": spread,
                                "max_refinement_drift": max(drift) if drift else None})
    barrier_summary.sort(key=lambda d: (d["eps"], d["delta"]))

    ts = [x["t"] for x in analyses]
    continuity = {}
    if n >= 1 and len(ts) >= 4:
        for key, vals in (("psi_wp", [x["wp"].psi_wp for x in analyses]),
                          ("I", [x["wp"].I for x in analyses])):
            rep = continuity_scan(ts, vals, a.continuity_tol, a.continuity_tail)
            continuity[key] = {"tail": rep.tail, "threshold": rep.threshold,
                               "verdict": rep.verdict, "witness": rep.witness,
                               "eventually_decreasing": rep.eventually_decreasing}
            checks.append(CheckResult(f"continuity_{key}", rep.passed, rep.tail, rep.threshold))

    diag = [x["wp"].diagnostics.as_tuple() for x in analyses]
    diag_max = [max(d[i] for d in diag) for i in range(3)]
    diag_summary = {"sup_phi": diag_max[0], "sup_trace": diag_max[1], "sup_grad": diag_max[2]}
    if refined is not None and refined[2]:
        rdiag = [x["wp"].diagnostics.as_tuple() for x in refined[2]]
        rmax = [max(d[i] for d in rdiag) for i in range(3)]
        for name, b, r in zip(("sup_phi", "sup_trace", "sup_grad"), diag_max, rmax):
            rel = abs(b - r) / max(abs(r), 1e-300)
            diag_summary[f"{name}_refinement"] = rel
            checks.append(CheckResult(f"diagnostics_{name}_refinement", rel < 0.10, rel, 0.10))
    checks.append(CheckResult("diagnostics_finite", all(map(math.isfinite, diag_max)),
                              max(diag_max), math.inf))

    summary = {"fibers": len(results), "solved": len(analyses), "volume": V, "N": N,
               "decay": decay_summary, "barrier": barrier_summary, "continuity": continuity,
               "diagnostics": diag_summary, "capacity": capacity_note}
    return checks, summary


# ------------------------------------------------------------------ writing

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def _sanitize(o):
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    if isinstance(o, dict):
        return {k: _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    return o


def _write_json(path, payload):
    text = json.dumps(_sanitize(payload), indent=2, sort_keys=True, default=_json_default)
    Path(path).write_text(text + "\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _output_dir(cfg, out):
    import os

    if out is not None:
        return Path(out)
    root = os.environ.get("KELAB_OUTPUT_ROOT")
    target = Path(cfg.output)
    if root and not target.is_absolute():
        return Path(root) / target
    return target


def _write_tables(out, cfg, fam, results, analyses, refined):
    n = fam.fiber.n
    a = cfg.analysis
    K = list(a.K_grid)
    files = []
    fdir = out / "fields"
    fdir.mkdir(parents=True, exist_ok=True)
    by_t = {x["t"]: x for x in analyses}
    rows = []
    for k, r in enumerate(results):
        x = by_t.get(abs(r.t))
        if r.ok:
            files.append(write_field(fdir / f"phi_{k:02d}.bin", r.potential))
            rows.append([abs(r.t), "ok", r.n_iter, r.potential.residual, x["conservation"],
                         float(r.potential.values.min()), float(r.potential.values.max())])
        else:
            rows.append([abs(r.t), type(r.error).__name__, r.n_iter, getattr(r.error, "residual",
                         math.nan), math.nan, math.nan, math.nan])
    files.append(write_csv(out / "fibers.csv", FIBER_COLUMNS, rows))

    rows = []
    for m in a.m_list:
        C_fit = max(envelope_constant(K, x["decay"][m][0], n, reference_rate(n)) for x in analyses)
        for x in analyses:
            v, w = x["decay"][m]
            for Kk, vk, wk in zip(K, v, w):
                rhs = C_fit * Kk ** n * math.exp(-Kk * reference_rate(n))
                rows.append([x["t"], m, Kk, vk, wk, rhs, rhs - vk])
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    files.append(write_csv(out / "decay.csv", DECAY_COLUMNS, rows))

    rows = []
    for x in analyses:
        for Kk, mc, ec, rc in x.get("capacity", []):
            rows.append([x["t"], Kk, mc.mass, mc.bound, mc.min_slack, mc.boundary_gap,
                         ec.rhs, max(ec.lower_bound, rc.lower_bound), min(ec.margin, rc.margin)])
    if rows:
        files.append(write_csv(out / "capacity.csv", CAPACITY_COLUMNS, rows))

    ref_C = {}
    if refined is not None:
        for x in refined[2]:
            for p, rep, _, _ in x["barrier"]:
                ref_C[(x["t"], p.eps, p.delta)] = rep.C_eps
    rows, reports = [], []
    for x in analyses:
        for p, rep, hmax, _ in x["barrier"]:
            ref = ref_C.get((x["t"], p.eps, p.delta))
            ratio = abs(rep.C_eps - ref) / abs(ref) if ref is not None else math.nan
            rows.append([x["t"], p.eps, p.delta, rep.C_eps, rep.witness[0], rep.witness[1]
                         if len(rep.witness) > 1 else 0, hmax, ratio])
            d = rep.as_dict()
            d["refinement_ratio"] = None if ref is None else ratio
            reports.append(d)
    files.append(write_csv(out / "barrier.csv", BARRIER_COLUMNS, rows))

    rows = []
    for x in analyses:
        rec = x["wp"]
        rows.append([x["t"], *rec.A, rec.psi_wp, rec.I, *rec.diagnostics.as_tuple()])
    files.append(write_csv(out / "wp.csv", WP_COLUMNS(n), rows))

    rows = [[x["t"], r, mass] for x in analyses for r, mass in zip(a.localized_radii, x["localized"])]
    files.append(write_csv(out / "localized.csv", LOCALIZED_COLUMNS, rows))
    return files, reports


def run_experiment(config, out=None, threads: int = 1) -> RunResult:
    """Solve, analyse and write the artifact set for ``config``.

    ``config`` is an :class:`ExperimentConfig` or a path to a YAML file.
    """
    cfg = load_config(config) if not isinstance(config, ExperimentConfig) else config
    out = _output_dir(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    fam, results, analyses, refined, checks, summary = analyze(cfg, threads)
    t1 = time.perf_counter()
    files, barrier_reports = _write_tables(out, cfg, fam, results, analyses, refined)
    summary["barrier_reports"] = barrier_reports
    summary["checks"] = [c.as_dict() for c in checks]
    summary["passed"] = all(c.passed for c in checks)
    summary["config_hash"] = cfg.hash
    _write_json(out / "summary.json", summary)
    files.append(out / "summary.json")
    (out / "config.yaml").write_text(__import__("kelab.config", fromlist=["dump_config"])
                                     .dump_config(cfg))
    files.append(out / "config.yaml")
    fibers = [{"t": abs(r.t), "status": "ok" if r.ok else type(r.error).__name__,
               "n_iter": r.n_iter} for r in results]
    inventory = [{"path": str(Path(f).relative_to(out)), "sha256": _sha256(f)}
                 for f in sorted(files, key=lambda p: str(p))]
    manifest = RunManifest(cfg.hash, __version__, fibers,
                           {"solve_and_analyze_s": t1 - t0,
                            "total_s": time.perf_counter() - t0}, inventory)
    _write_json(out / "manifest.json", manifest.as_dict())
    return RunResult(out, checks, manifest, summary)


def verify_suite(config, out=None, threads: int = 1):
    """Run the verification batteries plus the family invariants.

    Writes ``verify.json`` (pass/fail per invariant with measured slack)
    into the output directory and returns ``(checks, path)``.
    """
    cfg = load_config(config) if not isinstance(config, ExperimentConfig) else config
    out = _output_dir(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    checks = [
        identity_density_check(),
        brute_force_battery(seed=cfg.seed + 2),
        max_principle_battery(seed=cfg.seed),
        comparison_battery(seed=cfg.seed + 1),
        annulus_oracle_check(),
    ]
    *_, fam_checks, _ = analyze(cfg, threads)
    checks.extend(fam_checks)
    path = out / "verify.json"
    _write_json(path, {"config_hash": cfg.hash, "passed": all(c.passed for c in checks),
                       "checks": [c.as_dict() for c in checks]})
    return checks, path


# ------------------------------------------------------------------ report

REQUIRED = ("summary.json", "decay.csv", "wp.csv", "barrier.csv")


def report(run_dir) -> Path:
    """Consolidated summary and per-figure plot data for a completed run.

    Writes ``report/`` with x,y plot-data CSVs and ``report/summary.json``;
    calling it twice produces identical files.
    """
    run_dir = Path(run_dir)
    missing = [f for f in REQUIRED if not (run_dir / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{run_dir}: missing run outputs: {', '.join(missing)}")
    summary = json.loads((run_dir / "summary.json").read_text())
    rdir = run_dir / "report"
    rdir.mkdir(exist_ok=True)
    cols, rows = read_csv(run_dir / "wp.csv")
    n = sum(1 for c in cols if c.startswith("A_")) - 1
    idx = {c: i for i, c in enumerate(cols)}

    # decay curves log v(K) with the reference slope -1/(4n+2)
    dcols, drows = read_csv(run_dir / "decay.csv")
    di = {c: i for i, c in enumerate(dcols)}
    slope = -reference_rate(n)
    plot = []
    anchors = {}
    for r in drows:
        if r[di["volume"]] > 0:
            series = f"t={r[di['t']]:.6g},m={int(r[di['m']])}"
            plot.append([series, r[di["K"]], math.log(r[di["volume"]])])
            anchors.setdefault(int(r[di["m"]]), (r[di["K"]], math.log(r[di["volume"]])))
    Ks = sorted({r[di["K"]] for r in drows})
    for m, (K0, y0) in sorted(anchors.items()):
        for Kk in Ks:
            plot.append([f"reference,m={m}", Kk, y0 + slope * (Kk - K0)])
    if not anchors and Ks:
        plot.extend([["reference", Kk, slope * (Kk - Ks[0])] for Kk in Ks])
    write_csv(rdir / "decay_plot.csv", ("series", "x", "y"), plot)

    write_csv(rdir / "psi_wp_plot.csv", ("series", "x", "y"),
              [["psi_wp", r[idx["t"]], r[idx["psi_wp"]]] for r in rows])
    bcols, brows = read_csv(run_dir / "barrier.csv")
    bi = {c: i for i, c in enumerate(bcols)}
    write_csv(rdir / "c_eps_plot.csv", ("series", "x", "y"),
              [[f"eps={r[bi['eps']]:g},delta={r[bi['delta']]:g}", r[bi["t"]], r[bi["C_eps"]]]
               for r in brows])
    write_csv(rdir / "diagnostics_plot.csv", ("series", "x", "y"),
              [[name, r[idx["t"]], r[idx[name]]] for name in ("sup_phi", "sup_trace", "sup_grad")
               for r in rows])
    consolidated = {
        "passed": summary.get("passed"),
        "failed_checks": [c["name"] for c in summary.get("checks", []) if not c["passed"]],
        "decay_reference_slope": slope,
        "decay": summary.get("decay"),
        "continuity": summary.get("continuity"),
        "barrier": summary.get("barrier"),
        "diagnostics": summary.get("diagnostics"),
    }
    _write_json(rdir / "summary.json", consolidated)
    return rdir
