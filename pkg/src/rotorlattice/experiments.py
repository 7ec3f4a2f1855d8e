"""Verification checks and parameter sweeps driven by a RunConfig.

Each check returns an ExperimentResult whose ``passed`` flag compares the
measured numbers against the tolerances in the [experiment] section.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import canonical
from .action_angle import AveragingScheme, averaged_drift_R, averaged_drift_closed
from .config import ConfigError, RunConfig
from .model import hamiltonian
from .sde import SdeRun, run, run_coupled
from .stats import (
    angle_uniformity,
    chi2_uniformity,
    compare_laws,
    exponential_cdf,
    ks_critical,
    ks_statistic,
    wasserstein1,
)

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    metrics: dict
    config: RunConfig
    table: list[list] = field(default_factory=list)
    header: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "check": self.name,
            "passed": bool(self.passed),
            "metrics": _jsonable(self.metrics),
            "table": {"header": self.header, "rows": _jsonable(self.table)},
            "seed": self.config["run"]["seed"],
            "config_hash": self.config.hash(),
            "config": self.config.to_dict(),
            "artifacts": self.artifacts,
            "seconds": round(self.seconds, 3),
        }

    def text(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"]
        if self.header:
            widths = [max(len(str(h)), 12) for h in self.header]
            lines.append("  ".join(str(h).rjust(w) for h, w in zip(self.header, widths)))
            for row in self.table:
                lines.append("  ".join(_fmt(v).rjust(w) for v, w in zip(row, widths)))
        for k, v in self.metrics.items():
            if not isinstance(v, (list, dict)):
                lines.append(f"  {k} = {_fmt(v)}")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "yes" if v else "no"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def random_states(rng, count: int, N: int, action_min: float, action_max: float) -> np.ndarray:
    """Complex states with actions uniform in [action_min, action_max] and uniform angles."""
    I = rng.uniform(action_min, action_max, size=(count, N))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(count, N))
    return np.sqrt(2.0 * I) * np.exp(1j * phi)


def _initial_ensemble(cfg: RunConfig, N: int, M: int, seed: int) -> np.ndarray:
    """Members share the action run.initial_action and get uniform random angles."""
    rng = np.random.default_rng(seed)
    I0 = cfg["run"]["initial_action"]
    return np.sqrt(2.0 * I0) * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(M, N)))


# --------------------------------------------------------------------------
# checks


def check_conservation(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Relative drift of sum_k I_k along the Hamiltonian-only flow (RK4)."""
    exp, r = cfg["experiment"], cfg["run"]
    spec = cfg.build_spec()
    if spec.dissipation.kind != "none" or np.any(spec.temperatures > 0):
        raise ConfigError("conservation needs dissipation = none and zero temperatures")
    rng = np.random.default_rng(r["seed"])
    u0 = random_states(rng, 1, spec.lattice.N, exp["action_min"], exp["action_max"])[0]
    sde = cfg.sde_run(kind="full", scheme="rk4", ensemble=1, workers=1)
    traj = run(u0, sde, spec)
    total = traj.actions[0].sum(axis=-1)
    drift = float(np.max(np.abs(total - total[0])) / total[0])
    H = hamiltonian(traj.states[0], spec)
    hdrift = float(np.max(np.abs(H - H[0])) / abs(H[0]))
    metrics = {"relative_action_drift": drift, "relative_energy_drift": hdrift,
               "tolerance": exp["tolerance"], "steps": sde.n_steps}
    return ExperimentResult("conservation", drift < exp["tolerance"], metrics, cfg)


def check_homological(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Homological residual on random states for each configured potential."""
    exp = cfg["experiment"]
    rows, ok = [], True
    metrics = {}
    for k, pot in enumerate(exp["potentials"]):
        spec = cfg.build_spec(potential=pot)
        rng = np.random.default_rng(cfg["run"]["seed"] + k)
        u = random_states(rng, exp["states"], spec.lattice.N, exp["action_min"], exp["action_max"])
        res = float(np.max(canonical.homological_residual(u, spec, exp["quad_points"])))
        passed = res < exp["tolerance"]
        phi_err = float("nan")
        if pot == "linear":
            quad = canonical.phi_value(u, spec, exp["quad_points"])
            phi_err = float(np.max(np.abs(quad - canonical.phi_linear_closed(u, spec))))
            passed &= phi_err < exp["phi_tolerance"]
            metrics["phi_closed_form_error"] = phi_err
        ok &= passed
        rows.append([pot, res, phi_err, passed])
    metrics.update(tolerance=exp["tolerance"], phi_tolerance=exp["phi_tolerance"])
    return ExperimentResult("homological", ok, metrics, cfg, rows,
                            ["potential", "max_residual", "phi_error", "pass"])


_DRIFT_CASES = {
    "diagonal2": dict(dissipation="diagonal", p=2),
    "diagonal4": dict(dissipation="diagonal", p=4, k=2),
    "linear": dict(dissipation="linear", p=2),
    "example2": dict(dissipation="example2", p=4, k=2),
}


def check_avg_drift(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Quadrature R_j against the closed forms on random action vectors.

    Cases with p = 4 raise the frequency power to 2 so that f dominates
    1 + x^{p/2}.
    """
    exp = cfg["experiment"]
    scheme = AveragingScheme("quadrature", points=exp["averaging_points"])
    rows, ok = [], True
    for k, case in enumerate(exp["cases"]):
        if case not in _DRIFT_CASES:
            raise ConfigError(f"experiment.cases: unknown case {case!r}")
        over = dict(_DRIFT_CASES[case])
        over["k"] = max(over.get("k", 1), cfg["model"]["k"])
        if case == "linear" and cfg["model"]["coupling"] == 0:
            raise ConfigError("the linear case needs a nonzero model.coupling")
        spec = cfg.build_spec(**over)
        rng = np.random.default_rng(cfg["run"]["seed"] + k)
        I = rng.uniform(exp["action_min"], exp["action_max"], size=(exp["vectors"], spec.lattice.N))
        quad = averaged_drift_R(I, spec, scheme)
        err = float(np.max(np.abs(quad - averaged_drift_closed(I, spec))))
        passed = err < exp["tolerance"]
        ok &= passed
        rows.append([case, err, passed])
    return ExperimentResult("avg-drift", ok, {"tolerance": exp["tolerance"]}, cfg, rows,
                            ["case", "max_error", "pass"])


def stationary_samples(cfg: RunConfig, spec, workers: int = 1) -> dict:
    """Thinned samples of the full SDE from many independent chains.

    Every chain runs burn_in + samples_per_chain * sample_interval units of
    slow time and is recorded every sample_interval after the burn-in.
    """
    exp, r = cfg["experiment"], cfg["run"]
    eps = spec.eps
    interval, burn = exp["sample_interval"], exp["burn_in"]
    stride = int(round(interval / (eps * r["dt"])))
    if stride < 1 or abs(stride * eps * r["dt"] - interval) > 1e-9 * interval:
        raise ConfigError("experiment.sample_interval must be a multiple of eps * run.dt")
    skip = int(np.ceil(burn / interval - 1e-9))
    tau = (skip + exp["samples_per_chain"]) * interval
    K = exp["chains"]
    sde = SdeRun(kind="full", scheme=r["scheme"], dt=r["dt"], horizon=tau / eps, seed=r["seed"],
                 stride=stride, ensemble=K, workers=workers)
    u0 = _initial_ensemble(cfg, spec.lattice.N, K, r["seed"] + 7919)
    traj = run(u0, sde, spec)
    kept = traj.states[:, skip + 1:]
    return {"states": kept, "actions": 0.5 * np.abs(kept) ** 2,
            "angles": np.mod(np.angle(kept), 2.0 * np.pi), "steps": sde.n_steps}


def _pooled_lag1(x: np.ndarray) -> float:
    """Lag-1 autocorrelation pooled over chains; x has shape (chains, samples)."""
    d = x - x.mean()
    return float(np.mean(d[:, :-1] * d[:, 1:]) / np.mean(d * d))


def check_stationary(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Per-node stationary mean and KS against Exp(2/T_j); angle uniformity."""
    exp = cfg["experiment"]
    spec = cfg.build_spec()
    T = spec.temperatures
    if np.any(T <= 0):
        raise ConfigError("stationary check needs positive temperatures")
    data = stationary_samples(cfg, spec, workers)
    A, phi = data["actions"], data["angles"]
    n = A.shape[0] * A.shape[1]
    crit = ks_critical(n)
    rows = []
    ok_actions, ok_angles = n >= exp["min_samples"], True
    for j in range(spec.lattice.N):
        x = A[:, :, j].ravel()
        mean = float(x.mean())
        rel = abs(mean - T[j] / 2) / (T[j] / 2)
        ks = ks_statistic(x, exponential_cdf(2.0 / T[j]))
        ac = _pooled_lag1(A[:, :, j])
        res = angle_uniformity(phi[:, :, j])
        _, pchi = chi2_uniformity(phi[:, :, j], 16)
        node_ok = rel < exp["mean_rel_tol"] and ks < crit and ac < exp["autocorr_max"]
        ang_ok = res < 3.0 / np.sqrt(n) and pchi > exp["ks_level"]
        ok_actions &= node_ok
        ok_angles &= ang_ok
        rows.append([j, T[j], mean, rel, ks, ac, res, pchi, node_ok, ang_ok])
    metrics = {"samples_per_node": n, "ks_critical": crit, "resultant_bound": 3.0 / np.sqrt(n),
               "actions_pass": bool(ok_actions), "angles_pass": bool(ok_angles),
               "mean_rel_tol": exp["mean_rel_tol"], "steps_per_chain": data["steps"]}
    return ExperimentResult("stationary", ok_actions and ok_angles, metrics, cfg, rows,
                            ["node", "T", "mean_I", "rel_err", "ks", "lag1", "resultant",
                             "chi2_p", "actions_ok", "angles_ok"])


def averaged_ensemble(cfg: RunConfig, spec, M: int, seed: int, workers: int = 1) -> np.ndarray:
    """Averaged-equation actions at slow time experiment.tau."""
    r, tau = cfg["run"], cfg["experiment"]["tau"]
    I0 = np.full(spec.lattice.N, r["initial_action"])
    sde = SdeRun(kind="averaged", scheme="em", dt=r["averaged_dt"], horizon=tau, seed=seed,
                 frame="slow", ensemble=M, workers=workers,
                 stride=int(np.ceil(tau / r["averaged_dt"] - 1e-9)))
    return run(I0, sde, spec).final


def full_ensemble(cfg: RunConfig, spec, M: int, seed: int, workers: int = 1) -> np.ndarray:
    """Full-SDE actions at fast time tau / eps (slow time tau)."""
    r, tau = cfg["run"], cfg["experiment"]["tau"]
    horizon = tau / spec.eps
    sde = SdeRun(kind="full", scheme=r["scheme"], dt=r["dt"], horizon=horizon, seed=seed,
                 ensemble=M, workers=workers, stride=int(np.ceil(horizon / r["dt"] - 1e-9)))
    u0 = _initial_ensemble(cfg, spec.lattice.N, M, seed + 104729)
    return 0.5 * np.abs(run(u0, sde, spec).final) ** 2


def _bootstrap_mean_w1(a: np.ndarray, b: np.ndarray, reps: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    vals = np.empty(reps)
    for k in range(reps):
        ia = rng.integers(0, a.shape[0], a.shape[0])
        ib = rng.integers(0, b.shape[0], b.shape[0])
        vals[k] = np.mean([wasserstein1(a[ia, j], b[ib, j]) for j in range(a.shape[1])])
    return float(vals.std(ddof=1))


def epsilon_table(cfg: RunConfig, epsilons, workers: int = 1) -> tuple[list, dict]:
    """W1 between full-SDE and averaged-equation actions at tau for each eps."""
    exp, r = cfg["experiment"], cfg["run"]
    M = r["ensemble"]
    base = cfg.build_spec()
    ref = averaged_ensemble(cfg, base, M, r["seed"] + M, workers)
    rows = []
    for eps in epsilons:
        spec = cfg.build_spec(eps=float(eps))
        full = full_ensemble(cfg, spec, M, r["seed"], workers)
        w = np.array([wasserstein1(full[:, j], ref[:, j]) for j in range(spec.lattice.N)])
        se = _bootstrap_mean_w1(full, ref, exp["bootstrap"], r["seed"]) if exp["bootstrap"] > 1 else 0.0
        rows.append([float(eps), float(w.mean()), se, float(w.max()), int(np.argmax(w))])
    return rows, {"reference_mean_action": ref.mean(axis=0)}


def check_epsilon_sweep(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Node-mean W1 nonincreasing in eps (to se_multiplier combined bootstrap SEs)
    and the largest per-node W1 at the smallest eps below w1_tol."""
    exp = cfg["experiment"]
    eps = sorted(exp["epsilons"], reverse=True)
    if len(eps) < 2:
        raise ConfigError("experiment.epsilons needs at least two values")
    rows, extra = epsilon_table(cfg, eps, workers)
    mono = []
    for prev, cur in zip(rows, rows[1:]):
        slack = exp["se_multiplier"] * np.hypot(prev[2], cur[2])
        mono.append(bool(cur[1] <= prev[1] + slack))
    final_ok = rows[-1][3] < exp["w1_tol"]
    for row, m in zip(rows, [True] + mono):
        row.append(m)
    metrics = {"monotone": all(mono), "final_max_w1": rows[-1][3], "w1_tol": exp["w1_tol"],
               "reference_mean_action": extra["reference_mean_action"]}
    return ExperimentResult("epsilon-sweep", all(mono) and final_ok, metrics, cfg, rows,
                            ["eps", "mean_w1", "boot_se", "max_w1", "worst_node", "monotone"])


def check_lifting(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Effective-equation actions against averaged-equation actions at tau."""
    exp, r = cfg["experiment"], cfg["run"]
    spec = cfg.build_spec()
    M = r["ensemble"]
    tau = exp["tau"]
    avg = averaged_ensemble(cfg, spec, M, r["seed"], workers)
    v0 = np.full(spec.lattice.N, np.sqrt(2.0 * r["initial_action"]), dtype=complex)
    sde = SdeRun(kind="effective", scheme="em", dt=r["averaged_dt"], horizon=tau, seed=r["seed"] + M,
                 frame="slow", ensemble=M, workers=workers,
                 stride=int(np.ceil(tau / r["averaged_dt"] - 1e-9)))
    eff = 0.5 * np.abs(run(v0, sde, spec).final) ** 2
    rep = compare_laws(eff, avg, w1_tol=exp["w1_tol"], ks_level=exp["ks_level"])
    rows = [[n.node, n.w1, n.ks, n.ks_pvalue, n.mean_a, n.mean_b, n.se, n.passed] for n in rep.rows]
    metrics = {"max_w1": rep.max_w1, "w1_tol": exp["w1_tol"], "ks_level": exp["ks_level"],
               "report": rep.to_json()}
    return ExperimentResult("lifting", rep.all_pass, metrics, cfg, rows,
                            ["node", "w1", "ks", "ks_p", "mean_eff", "mean_avg", "se", "pass"])


def check_near_identity(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """sup |u - v| / sqrt(eps) across eps decades and inverse(forward(u)) = u."""
    exp = cfg["experiment"]
    spec = cfg.build_spec()
    params = canonical.FlowParams(substeps=exp["substeps"], points=exp["quad_points"])
    rng = np.random.default_rng(cfg["run"]["seed"])
    u = random_states(rng, exp["states"], spec.lattice.N, exp["action_min"], exp["action_max"])
    rows = []
    for eps in sorted(exp["epsilons"], reverse=True):
        v = canonical.forward_map(u, eps, spec, params)
        back = canonical.inverse_map(v, eps, spec, params)
        ratio = float(np.max(np.abs(u - v)) / np.sqrt(eps))
        shift = float(np.max(np.abs(np.abs(u) ** 2 - np.abs(v) ** 2) / 2) / np.sqrt(eps))
        inv = float(np.max(np.abs(back - u)))
        rows.append([eps, ratio, shift, inv])
    ratios = np.array([r[1] for r in rows])
    variation = float((ratios.max() - ratios.min()) / ratios.min())
    inv_err = max(r[3] for r in rows)
    ok = variation < exp["ratio_variation"] and ratios.max() < exp["ratio_bound"] and inv_err < exp["inverse_tol"]
    metrics = {"ratio_variation": variation, "max_ratio": float(ratios.max()), "inverse_error": inv_err,
               "ratio_bound": exp["ratio_bound"], "variation_tol": exp["ratio_variation"],
               "inverse_tol": exp["inverse_tol"]}
    return ExperimentResult("near-identity", bool(ok), metrics, cfg, rows,
                            ["eps", "max_ratio", "action_ratio", "inverse_error"])


CHECKS = {
    "conservation": check_conservation,
    "homological": check_homological,
    "avg-drift": check_avg_drift,
    "lifting": check_lifting,
    "stationary": check_stationary,
    "epsilon-sweep": check_epsilon_sweep,
    "near-identity": check_near_identity,
}


def verify(check: str, cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    if check not in CHECKS:
        raise ConfigError(f"unknown check {check!r}")
    t0 = time.perf_counter()
    res = CHECKS[check](cfg, workers)
    res.seconds = time.perf_counter() - t0
    log.info("%s finished in %.1f s", check, res.seconds)
    return res


# --------------------------------------------------------------------------
# sweeps


def _sweep_values(cfg: RunConfig) -> list[float]:
    vals = cfg["experiment"]["values"]
    if len(vals) < 2:
        raise ConfigError("experiment.values needs at least two entries for a sweep")
    return vals


def sweep_epsilon(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    vals = sorted(_sweep_values(cfg), reverse=True)
    res = check_epsilon_sweep(cfg.with_values("experiment", epsilons=vals), workers)
    res.name = "sweep-epsilon"
    res.passed = bool(res.metrics["monotone"])
    return res


def sweep_N(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Stationary per-node means for chains of different length (trend only)."""
    exp = cfg["experiment"]
    rows, ok = [], True
    for n in _sweep_values(cfg):
        n = int(n)
        sub = cfg.with_values("lattice", d=1, extents=[n], defects=[], defect_signs=[])
        spec = sub.build_spec()
        A = stationary_samples(sub, spec, workers)["actions"]
        means = A.reshape(-1, n).mean(axis=0)
        rel = np.abs(means - spec.temperatures / 2) / (spec.temperatures / 2)
        stable = bool(rel.max() < exp["mean_rel_tol"])
        ok &= stable
        rows.append([n, float(rel.max()), float(rel.mean()), stable])
    return ExperimentResult("sweep-N", ok, {"mean_rel_tol": exp["mean_rel_tol"]}, cfg, rows,
                            ["N", "max_rel_err", "mean_rel_err", "stable"])


def sweep_dt(cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    """Halving dt on shared Brownian paths: mean actions should move by less
    than their Monte Carlo standard error."""
    r = cfg["run"]
    vals = sorted(_sweep_values(cfg))
    spec = cfg.build_spec()
    sde = cfg.sde_run(workers=workers)
    if sde.kind == "averaged":
        x0 = np.full(spec.lattice.N, r["initial_action"])
    else:
        x0 = _initial_ensemble(cfg, spec.lattice.N, sde.ensemble, r["seed"] + 104729)
    finals = run_coupled(x0, vals, sde, spec)
    rows, ok = [], True
    for fine, coarse in zip(vals, vals[1:]):
        a = finals[fine] if sde.kind == "averaged" else 0.5 * np.abs(finals[fine]) ** 2
        b = finals[coarse] if sde.kind == "averaged" else 0.5 * np.abs(finals[coarse]) ** 2
        delta = np.abs(a.mean(axis=0) - b.mean(axis=0))
        se = a.std(axis=0, ddof=1) / np.sqrt(a.shape[0])
        passed = bool(np.all(delta < se))
        ok &= passed
        rows.append([coarse, fine, float(delta.max()), float(se.min()), passed])
    return ExperimentResult("sweep-dt", ok, {}, cfg, rows,
                            ["dt", "dt_half", "max_mean_change", "min_se", "pass"])


SWEEPS = {"epsilon": sweep_epsilon, "N": sweep_N, "dt": sweep_dt}


def sweep(parameter: str, cfg: RunConfig, workers: int = 1) -> ExperimentResult:
    if parameter not in SWEEPS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    t0 = time.perf_counter()
    res = SWEEPS[parameter](cfg, workers)
    res.seconds = time.perf_counter() - t0
    return res
