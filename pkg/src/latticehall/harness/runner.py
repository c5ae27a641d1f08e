"""Experiment pipelines and artifact emission."""

from __future__ import annotations

import csv
import enum
import json
import math
import time
import traceback
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .. import __version__
from .. import hall, observables, spectra
from ..lattice import deformed_cut, periodic_distance
from ..manybody import (build_basis, build_hamiltonian, number_operator, restrict_hoppings,
                        restrict_interactions)
from ..spectra import FeasibilityError, NoGappedMultiplet, detect_multiplet
from .cache import EigenCache, default_root
from .config import ConfigError, ExperimentConfig, build_model, load_config

REPORT_SCHEMA_VERSION = 1
ROUTE_TOL = 1e-6


class ExitCode(enum.IntEnum):
    OK = 0
    CONFIG = 2
    NO_MULTIPLET = 3
    TOLERANCE = 4
    RESOURCE = 5


class ToleranceFailure(RuntimeError):
    pass


def tolerances() -> dict:
    """Every numerical threshold used by an assertion in the pipelines."""
    return {
        "hermitian_tol": 1e-12,
        "zero_tol": 1e-15,
        "dense_threshold": spectra.DENSE_THRESHOLD,
        "residual_tol": spectra.RESIDUAL_TOL,
        "degeneracy_floor": spectra.DEGENERACY_FLOOR,
        "ratio_threshold": spectra.RATIO_THRESHOLD,
        "q_max": spectra.Q_MAX,
        "solver_seed": spectra.SOLVER_SEED,
        "solver_revision": spectra.SOLVER_REVISION,
        "gap_floor": hall.GAP_FLOOR,
        "imag_tol": hall.IMAG_TOL,
        "singular_floor": hall.SINGULAR_FLOOR,
        "integrality_tol": hall.INTEGRALITY_TOL,
        "fd_step": hall.FD_STEP,
        "route_tol": ROUTE_TOL,
        "norm_tol": observables.NORM_TOL,
        "quadrature_tol": observables.QUADRATURE_TOL,
        "cache_spot_check_tol": 1e-12,
    }


class Stages:
    def __init__(self):
        self.times: dict[str, float] = {}

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0


def _floatify(obj):
    if isinstance(obj, dict):
        return {str(k): _floatify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_floatify(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# Pipelines; each returns (report dict, {csv name: (header, rows)})


def _node_solver(family, cache, q_hint, full):
    def solve(phi):
        H = family.hamiltonian(phi)
        eig = cache.solve(H, None if full else (q_hint or spectra.Q_MAX) + 4)
        return eig, detect_multiplet(eig, q_hint)
    return solve


def _sigma_at(family, phi, cache, q_hint, fd_step):
    """Kubo conductance (dense or by linear solves) and the projector trace."""
    full = family.dim <= spectra.SMALL_DIM
    solve = _node_solver(family, cache, q_hint, full)
    eig, m = solve(tuple(phi))
    J1, J2 = family.currents(phi)
    if full:
        kubo = hall.kubo_sum(J1, J2, m, eig)
    else:
        kubo = hall.kubo_resolvent(J1, J2, family.hamiltonian(phi), m)
    trace = hall.projector_trace(family, phi, fd_step, q_hint, solver=lambda p: solve(tuple(p))[1])
    return kubo, trace, m


def run_spectrum(cfg: ExperimentConfig, model, cache, stages):
    p = cfg.params
    fam = hall.TwistedFamily(model)
    with stages("eigensolve"):
        eig = cache.solve(fam.hamiltonian(p["phi"]), p["levels"])
    with stages("multiplet"):
        m = detect_multiplet(eig, p["q_hint"])
    report = {"energies": eig.values.tolist(), "q": m.q, "deltaE": m.deltaE, "DeltaE": m.DeltaE,
              "dim": fam.dim}
    return report, {}


def run_chern(cfg: ExperimentConfig, model, cache, stages):
    p = cfg.params
    basis = model.basis()
    fam = hall.TwistedFamily(model, k1=p["k1"], k2=p["k2"], basis=basis)
    with stages("flux_grid"):
        st = hall.average_over_flux(fam, p["grid"], p["q_hint"], p["refine"], cfg.workers, p["mix_seed"],
                                    solver=_node_solver(fam, cache, p["q_hint"], fam.dim <= spectra.SMALL_DIM))
    rep = hall.ConductanceReport(st.p, st.q, grid={"size": st.size, "refined": st.refined})
    with stages("sigma_point"):
        kubo, trace, _ = _sigma_at(fam, p["sigma_point"], cache, st.q, p["fd_step"])
    rep.sigma_kubo, rep.sigma_trace = kubo, trace
    rep.add_check("integrality_residual", st.residual, hall.INTEGRALITY_TOL)
    rep.add_check("route_kubo_vs_trace", abs(kubo - trace), ROUTE_TOL)
    rep.diagnostics = {"min_gap": st.min_gap, "max_spread": st.max_spread,
                       "min_link": float(st.link_dets.min()), "sigma_point": list(p["sigma_point"])}
    if st.kubo_grid is not None:
        avg = float(st.kubo_grid.mean())
        rep.diagnostics["kubo_grid_average"] = avg
        rep.diagnostics["kubo_grid_deviation"] = avg - rep.sigma_averaged
    if p["alphas"] or p["deformed_cut"]:
        with stages("deformation"):
            cuts = []
            if p["deformed_cut"]:
                dc = p["deformed_cut"]
                vals = {tuple(v["site"]): float(v["value"]) for v in dc.get("values", [])}
                cuts.append(deformed_cut(1, dc.get("k", p["k1"]), tuple(dc["anchor"]), vals,
                                         model.lattice, dc.get("R0", 3.0)))
            site = model.lattice.index(tuple(p["alpha_site"]))
            inv = hall.deformation_invariance(model, p["alphas"], site, st.size, st.q, cuts, cfg.workers)
        rep.diagnostics["deformation"] = inv
        for label, val in inv.items():
            rep.add_check(f"deformation_{label}", abs(val - st.p), 0.0)
    csvs = {"curvature.csv": (("phi1", "phi2", "F"), list(st.curvature_rows()))}
    return rep.to_dict(), csvs


def run_kubo_vs_time(cfg: ExperimentConfig, model, cache, stages):
    p = cfg.params
    fam = hall.TwistedFamily(model)
    phi = tuple(p["phi"])
    with stages("eigensolve"):
        eig = cache.solve(fam.hamiltonian(phi), None)
        m = detect_multiplet(eig, p["q_hint"])
    with stages("routes"):
        J1, J2 = fam.currents(phi)
        kubo = hall.kubo_sum(J1, J2, m, eig)
        trace = hall.projector_trace(fam, phi, p["fd_step"], m.q)
    L2 = model.lattice.L2
    window = p["window"] if p["window"] is not None else L2
    rep = hall.ConductanceReport(0, m.q, kubo, trace)
    rows = []
    norms = None
    with stages("time_domain"):
        for eta in p["eta"]:
            for T in p["T"]:
                prm = hall.TimeDomainParams(float(eta), float(T), window, p["region"], tuple(p["anchor"]))
                Jw, Jr, ch = hall.windowed_and_region(fam, phi, prm)
                if norms is None:
                    norms = {"J_window": observables.operator_norm(Jw),
                             "J_region": observables.operator_norm(Jr),
                             "charge": observables.operator_norm(ch)}
                td = hall.time_domain(Jw, Jr, ch, prm, m, eig, norms)
                rows.append((eta, T, td.value, td.limit, abs(td.value - td.limit), td.switching_bound))
                rep.add_check(f"switching eta={eta:g} T={T:g}", abs(td.value - td.limit), td.switching_bound)
                rep.add_check(f"correction eta={eta:g} T={T:g}", td.correction, td.correction_bound)
    rep.sigma_time = td.limit
    rep.sigma_time_params = {"window": window, "region": p["region"], "anchor": list(p["anchor"])}
    rep.add_check("route_kubo_vs_trace", abs(kubo - trace), ROUTE_TOL)
    saturating = (2 * window + 1 >= L2) and p["region"] is None
    if saturating:
        rep.add_check("route_time_vs_kubo", abs(td.limit - kubo), ROUTE_TOL)
    d = rep.to_dict()
    d["p"] = None
    d["sigma_averaged"] = None
    d["diagnostics"] = {"gap": m.DeltaE, "spread": m.deltaE, "persistent_current": td.persistent_current,
                        "norms": norms, "saturating": saturating}
    csvs = {"sigma_eta_T.csv": (("eta", "T", "sigma", "limit", "deviation", "bound"), rows)}
    return d, csvs


def run_gap_scan(cfg: ExperimentConfig, model, cache, stages):
    p = cfg.params
    fam = hall.TwistedFamily(model)
    with stages("flux_grid"):
        nodes, out = hall.solve_grid(fam, p["grid"], p["q_hint"], cfg.workers,
                                     solver=_node_solver(fam, cache, p["q_hint"], False))
    qs = [m.q for _, m in out]
    rows = [(phi[0], phi[1], m.DeltaE, m.deltaE, m.q) for phi, (_, m) in zip(nodes, out)]
    report = {"grid": p["grid"], "q_values": sorted(set(qs)), "q_constant": len(set(qs)) == 1,
              "min_gap": min(r[2] for r in rows), "max_spread": max(r[3] for r in rows)}
    csvs = {"gap_vs_flux.csv": (("phi1", "phi2", "gap", "spread", "q"), rows)}
    if not report["q_constant"]:
        raise hall.GapClosure(f"multiplet size varies over the grid: {report['q_values']}")
    return report, csvs


def run_locality(cfg: ExperimentConfig, model, cache, stages):
    from ..models import chain

    p = cfg.params
    basis = build_basis(model.lattice.n_sites, None)
    H = build_hamiltonian(model.hoppings, model.interactions, basis)
    om = list(p["omega"])
    Ho = build_hamiltonian(restrict_hoppings(model.hoppings, om),
                           restrict_interactions(model.interactions, om), basis)
    with stages("eigensolve"):
        ef, eo = cache.solve(H), cache.solve(Ho)
    A = number_operator(p["site"], basis)
    ts = np.linspace(0.0, p["t_max"], p["samples"])
    with stages("restricted_evolution"):
        gap = observables.restricted_evolution_gap(A, [p["site"]], om, ef, eo, H, Ho, ts)
    prm = dict(model.params)
    prm.update(L=p["lr_sites"], N=None)
    lr_model = chain(**{k: prm[k] for k in ("L", "t", "V_nn", "N", "periodic") if k in prm})
    lb = build_basis(p["lr_sites"], None)
    with stages("commutator_growth"):
        le = cache.solve(build_hamiltonian(lr_model.hoppings, lr_model.interactions, lb))
        probes = {d: number_operator(d, lb) for d in range(1, p["lr_sites"])}
        env = observables.commutator_growth(number_operator(0, lb), probes, le,
                                            np.linspace(0.0, p["lr_t_max"], p["lr_samples"]))
    s = env.samples
    cap = 2.0  # |n_0| |n_d| = 1
    report = {"evolution_gap_holds": gap.holds, "max_lhs": float(gap.lhs.max()),
              "max_rhs": float(gap.rhs.max()),
              "commutator_zero_at_t0": bool(np.all(s[s[:, 1] == 0, 2] == 0)),
              "commutator_bounded": bool(np.all(s[:, 2] <= cap + 1e-12)),
              "envelope": {"C": env.C, "mu": env.mu, "v": env.v, "r2": env.r2}}
    csvs = {"evolution_gap.csv": (("time", "lhs", "rhs"), list(zip(gap.times, gap.lhs, gap.rhs))),
            "commutator_growth.csv": (("distance", "time", "value", "bound"),
                                      [(d, t, v, min(env(d, t), cap)) for d, t, v in s])}
    return report, csvs


def corr_decay(model, source, phi=(0.0, 0.0), q_hint=None, cache=None):
    """Largest ``|<<n_source; n_y>>|`` at every distance and a log-linear fit."""
    fam = hall.TwistedFamily(model)
    H = fam.hamiltonian(phi)
    eig = cache.solve(H, None) if cache is not None else spectra.eigensolve(H)
    m = detect_multiplet(eig, q_hint)
    lat, basis = model.lattice, fam.basis
    A = number_operator(lat.index(tuple(source)), basis)
    best: dict[int, float] = {}
    for y in lat.sites():
        d = periodic_distance(tuple(source), y, lat)
        if d == 0:
            continue
        v = abs(observables.corr(A, number_operator(lat.index(y), basis), m, eig))
        best[d] = max(best.get(d, 0.0), v)
    ds = np.array(sorted(best), dtype=float)
    vs = np.array([best[int(d)] for d in ds])
    slope, icpt = np.polyfit(ds, np.log(vs), 1)
    pred = icpt + slope * ds
    ss = float(np.sum((np.log(vs) - np.log(vs).mean()) ** 2))
    r2 = 1.0 - float(np.sum((np.log(vs) - pred) ** 2)) / ss if ss > 0 else 1.0
    return {"distances": ds.tolist(), "values": vs.tolist(), "kappa": float(-slope),
            "C": float(np.exp(icpt)), "r2": r2, "monotone": bool(np.all(np.diff(vs) < 0)),
            "q": m.q, "gap": m.DeltaE}


def run_corr_decay(cfg: ExperimentConfig, model, cache, stages):
    p = cfg.params
    with stages("corr"):
        rep = corr_decay(model, p["source"], tuple(p["phi"]), p["q_hint"], cache)
    rows = [(d, v, rep["C"] * math.exp(-rep["kappa"] * d)) for d, v in zip(rep["distances"], rep["values"])]
    return rep, {"corr_decay.csv": (("distance", "value", "fit"), rows)}


PIPELINES = {
    "spectrum": run_spectrum,
    "chern": run_chern,
    "kubo-vs-time": run_kubo_vs_time,
    "gap-scan": run_gap_scan,
    "locality": run_locality,
    "corr-decay": run_corr_decay,
}


# ---------------------------------------------------------------------------


def _write_json(path: Path, payload):
    path.write_text(json.dumps(_floatify(payload), indent=2, sort_keys=True) + "\n")


def _error(out: Path, code: ExitCode, err: BaseException, extra=None) -> ExitCode:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"exit_code": int(code), "error": type(err).__name__, "message": str(err)}
    if extra:
        payload.update(extra)
    if code not in (ExitCode.CONFIG,):
        payload["traceback"] = traceback.format_exception_only(type(err), err)
    _write_json(out / "error.json", payload)
    return code


def execute(cfg: ExperimentConfig, cache_root: str | Path | None = None) -> tuple[ExitCode, dict | None]:
    """Run a validated config and write its artifacts."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cache = EigenCache(Path(cache_root) if cache_root else default_root(), enabled=cfg.cache)
    stages = Stages()
    try:
        with stages("build_model"):
            model = build_model(cfg.model)
        report, csvs = PIPELINES[cfg.kind](cfg, model, cache, stages)
    except NoGappedMultiplet as err:
        return _error(out, ExitCode.NO_MULTIPLET, err), None
    except (hall.SingularLink, hall.IntegralityError, spectra.ConvergenceError) as err:
        return _error(out, ExitCode.TOLERANCE, err), None
    except (FeasibilityError, MemoryError) as err:
        return _error(out, ExitCode.RESOURCE, err), None
    manifest = {
        "config_hash": cfg.content_hash(),
        "tool_version": __version__,
        "kind": cfg.kind,
        "stage_seconds": stages.times,
        "cache": cache.ledger(),
        "cache_root": str(cache.root) if cfg.cache else None,
        "tolerances": tolerances(),
        "workers": cfg.workers,
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    _write_json(out / "manifest.json", manifest)
    payload = {"schema_version": REPORT_SCHEMA_VERSION, "kind": cfg.kind,
               "model": {"name": model.name, "params": model.params}, "results": report}
    _write_json(out / "report.json", payload)
    for name, (header, rows) in csvs.items():
        write_csv(out / name, header, rows)
    failed = [c for c in report.get("bound_checks", []) if not c["passed"]]
    if failed:
        return _error(out, ExitCode.TOLERANCE, ToleranceFailure(
            "bound checks failed: " + ", ".join(c["name"] for c in failed))), payload
    return ExitCode.OK, payload


def run(path: str | Path, overrides=(), cache_root=None) -> ExitCode:
    try:
        cfg = load_config(path, overrides)
    except ConfigError as err:
        out = Path(path).parent / "out"
        return _error(out, ExitCode.CONFIG, err, {"diagnostics": err.diagnostics})
    return execute(cfg, cache_root)[0]
