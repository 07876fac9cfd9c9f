"""Task implementations behind the CLI: one experiment per invocation.

Every task builds its inputs from a validated ExperimentConfig, computes,
and writes CSV/JSON artifacts plus a manifest into the output directory.
Artifacts are written atomically and are byte-identical across reruns with
the same config and seed, independent of the thread count.
"""

from __future__ import annotations

import csv
import numpy as np

from pathlib import Path

from .artifacts import Manifest, atomic_path, write_json_atomic
from .config import ExperimentConfig
from .errors import ConfigError
from .kernels import TruncatedKernel, point_version
from .model import RegimeSwitchingModel, builtin_model, load_model
from .segment import constant_segment
from . import elliptic, ergostats, lyapunov, simulate as sim

__all__ = ["run"]


def _build_model(cfg: ExperimentConfig) -> RegimeSwitchingModel:
    ref = cfg.get("model")
    if "file" in ref:
        return load_model(ref["file"])
    params = dict(ref.get("params", {}))
    return builtin_model(ref["builtin"], **params)


def _build_init(spec: dict, model: RegimeSwitchingModel, dt: float):
    x = spec.get("x", 0.0)
    i = int(spec.get("i", 1))
    seg = constant_segment(x, model.delay, dt, dim=model.dim)
    return seg, i


def _build_lyapunov(spec: dict, model: RegimeSwitchingModel):
    kind = spec.get("builtin", "expressions")
    if kind == "example1":
        V, kappa = lyapunov.example1_lyapunov(
            model, i_max=int(spec.get("i_max", 8)), kappa=spec.get("kappa"))
        return V, {"builtin": "example1", "kappa": kappa}
    if kind == "quadratic":
        c = float(spec.get("regime_coeff", 0.0))
        return lyapunov.quadratic_lyapunov(c), {"builtin": "quadratic", "regime_coeff": c}
    if "f1" in spec:
        g = spec.get("g", ["const", 1.0])
        V = lyapunov.lyapunov_from_expressions(
            spec["f1"], spec.get("f2"), g=(g[0], float(g[1])))
        return V, {"f1": spec["f1"], "f2": spec.get("f2"), "g": list(g)}
    raise ConfigError("V: expected {'builtin': 'example1'|'quadratic'} or {'f1': expr, ...}")


def _build_target(spec: dict) -> sim.HitTarget:
    if "interval" in spec:
        lo, hi = spec["interval"]
        region = sim.Box.interval(float(lo), float(hi))
    elif "box" in spec:
        region = sim.Box(tuple(spec["box"]["lo"]), tuple(spec["box"]["hi"]))
    elif "ball" in spec:
        region = sim.Ball(tuple(spec["ball"]["center"]), float(spec["ball"]["radius"]))
    else:
        raise ConfigError("target: expected 'interval', 'box' or 'ball'")
    regimes = spec.get("regimes")
    return sim.HitTarget(
        region=region,
        complement=bool(spec.get("complement", False)),
        regimes=frozenset(int(r) for r in regimes) if regimes else None,
        all_nodes=bool(spec.get("all_nodes", False)),
    )


def _build_coefficients(cfg: ExperimentConfig):
    """(b, sigma, rates) for the elliptic tasks.

    ``coefficients`` carries point expressions: b, sigma, and either an
    explicit rate table {"i,j": expr} or {"from_model": {...}} reducing the
    named model's segment kernel to its constant-segment point version,
    truncated at K.
    """
    spec = cfg.get("coefficients")
    K = int(cfg["K"])
    b = spec.get("b", "0")
    sigma = spec.get("sigma", "1")
    if "rates" in spec:
        rates = {}
        for key, text in spec["rates"].items():
            i_str, j_str = str(key).split(",")
            rates[(int(i_str), int(j_str))] = text
        return b, sigma, rates
    if "from_model" in spec:
        ref = dict(spec["from_model"])
        model = load_model(ref["file"]) if "file" in ref else builtin_model(
            ref["builtin"], **ref.get("params", {}))
        kernel = TruncatedKernel(model.kernel, K)
        rates = {}
        for i in range(1, K + 1):
            for j, expr in kernel.row_exprs(i):
                rates[(i, j)] = point_version(expr, model.delay)
        return b, sigma, rates
    raise ConfigError("coefficients: expected 'rates' or 'from_model'")


def _write_csv(path, header, rows):
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


# ---------------------------------------------------------------------------
# Task bodies
# ---------------------------------------------------------------------------

def _task_simulate(cfg, out: Path, manifest: Manifest) -> None:
    model = _build_model(cfg)
    dt = float(cfg["dt"])
    init = _build_init(cfg["init"], model, dt)
    n_paths = int(cfg.get("n_paths", 1))
    traj = sim.simulate_path(model, init, float(cfg["T"]), dt, int(cfg["seed"]),
                             mode=cfg["mode"])
    with atomic_path(out / "trajectory.csv") as tmp:
        traj.to_csv(tmp)
    manifest.add("trajectory.csv")
    with atomic_path(out / "jumps.csv") as tmp:
        traj.jumps_to_csv(tmp)
    manifest.add("jumps.csv")
    summary = {"n_paths": n_paths, "censored": int(traj.censored), "seed": cfg["seed"],
               "dt": dt, "mode": cfg["mode"]}
    if n_paths > 1:
        batch = sim.simulate_batch(model, init, float(cfg["T"]), dt, n_paths,
                                   int(cfg["seed"]), mode=cfg["mode"],
                                   threads=int(cfg["threads"]))
        summary["censored"] = int(batch.censored.sum())
        _write_csv(out / "terminal.csv",
                   ["path"] + [f"x_{k+1}" for k in range(model.dim)] + ["alpha"],
                   [[p] + [repr(float(v)) for v in batch.x[p]] + [int(batch.regimes[p])]
                    for p in range(n_paths)])
        manifest.add("terminal.csv")
    write_json_atomic(out / "summary.json", summary)
    manifest.add("summary.json")


def _task_scan(cfg, out: Path, manifest: Manifest) -> None:
    model = _build_model(cfg)
    V, v_meta = _build_lyapunov(cfg.get("V"), model)
    s = cfg["sampler"]
    if "x_grid" in s:
        lo, hi, n = s["x_grid"]
        x_values = list(np.linspace(float(lo), float(hi), int(n)))
    else:
        x_values = [float(v) for v in s["x_values"]]
    sampler = lyapunov.SamplerSpec(
        x_values=x_values,
        i_max=int(s.get("i_max", 4)),
        delay=model.delay,
        h_seg=float(s.get("h_seg", model.delay / 16)),
        n_rough=int(s.get("n_rough", 0)),
        rough_sup=float(s.get("rough_sup", 0.0)),
        rough_scale=float(s.get("rough_scale", 1.0)),
        seed=int(cfg["seed"]),
    )
    report = lyapunov.scan_drift_condition(V, model, sampler, cfg["kind"],
                                           constants=cfg.get("constants"))
    doc = report.to_json()
    doc["V"] = v_meta
    doc["coercive"] = report.coercive
    doc["fit_failed"] = report.fit_failed
    write_json_atomic(out / "report.json", doc)
    manifest.add("report.json")
    _write_csv(out / "margins.csv", ["phi0", "supnorm", "i", "V", "LV", "margin", "family"],
               [[repr(float(a)), repr(float(b_)), int(c), repr(float(d)), repr(float(e)),
                 repr(float(f)), g]
                for a, b_, c, d, e, f, g in zip(
                    report.points["phi0"], report.points["supnorm"], report.points["i"],
                    report.points["v"], report.points["lv"], report.points["margin"],
                    report.points["family"])])
    manifest.add("margins.csv")


def _task_dynkin(cfg, out: Path, manifest: Manifest) -> None:
    model = _build_model(cfg)
    dt = float(cfg["dt"])
    V, v_meta = _build_lyapunov(cfg.get("V"), model)
    init = _build_init(cfg["init"], model, dt)
    res = lyapunov.dynkin_residual(V, model, init, float(cfg["T"]), dt,
                                   int(cfg["n_paths"]), int(cfg["seed"]),
                                   mode=cfg["mode"], threads=int(cfg["threads"]))
    with atomic_path(out / "residuals.csv") as tmp:
        res.to_csv(tmp)
    manifest.add("residuals.csv")
    doc = res.to_json()
    doc["V"] = v_meta
    halving = cfg.get("halving")
    if halving:
        h_dt = float(halving.get("dt", 8 * dt))
        h_n = int(halving.get("n_paths", cfg["n_paths"]))
        init_h = _build_init(cfg["init"], model, h_dt)
        doc["halving"] = lyapunov.dynkin_halving_study(
            V, model, init_h, float(cfg["T"]), h_dt, h_n, int(cfg["seed"]),
            threads=int(cfg["threads"]))
    write_json_atomic(out / "dynkin.json", doc)
    manifest.add("dynkin.json")


def _task_hitting(cfg, out: Path, manifest: Manifest) -> None:
    model = _build_model(cfg)
    dt = float(cfg["dt"])
    init = _build_init(cfg["init"], model, dt)
    target = _build_target(cfg["target"])
    tau, censored = sim.first_hit_batch(
        model, init, target, dt, float(cfg["t_max"]), int(cfg["n_paths"]),
        int(cfg["seed"]), mode=cfg["mode"], boundary=cfg.get("boundary", "grid"),
        threads=int(cfg["threads"]))
    batch = ergostats.HittingBatch(tau, censored, float(cfg["t_max"]),
                                   target=target.describe())
    with atomic_path(out / "hitting.csv") as tmp:
        batch.to_csv(tmp)
    manifest.add("hitting.csv")
    stats = ergostats.hitting_stats(batch)
    stats["seed"] = cfg["seed"]
    stats["dt"] = dt
    write_json_atomic(out / "stats.json", stats)
    manifest.add("stats.json")


def _task_tv(cfg, out: Path, manifest: Manifest) -> None:
    model = _build_model(cfg)
    dt = float(cfg["dt"])
    bins = cfg["bins"]
    binning = ergostats.Binning.regular(
        float(bins["lo"]), float(bins["hi"]), int(bins["cells"]),
        int(bins["regime_cap"]), dim=model.dim)
    curve = ergostats.tv_decay_curve(
        model,
        _build_init(cfg["init_a"], model, dt),
        _build_init(cfg["init_b"], model, dt),
        [float(t) for t in cfg["times"]],
        dt, int(cfg["n_paths"]), int(cfg["seed"]), binning,
        mode=cfg["mode"], threads=int(cfg["threads"]))
    with atomic_path(out / "tv.csv") as tmp:
        curve.to_csv(tmp)
    manifest.add("tv.csv")
    fit = ergostats.fit_exponential_rate(curve)
    fit["seed"] = cfg["seed"]
    write_json_atomic(out / "fit.json", fit)
    manifest.add("fit.json")


def _task_exit_time(cfg, out: Path, manifest: Manifest) -> None:
    b, sigma, rates = _build_coefficients(cfg)
    intervals = [tuple(map(float, iv)) for iv in cfg["domain"]]
    system, u, trace = elliptic.mean_exit_time(
        intervals, float(cfg["h"]), int(cfg["K"]), b, sigma, rates,
        tol=float(cfg["tol"]), m_max=int(cfg["m_max"]))
    with atomic_path(out / "solution.csv") as tmp:
        elliptic.solution_to_csv(system, u, tmp)
    manifest.add("solution.csv")
    with atomic_path(out / "trace.csv") as tmp:
        trace.to_csv(tmp)
    manifest.add("trace.csv")
    doc = {"converged": trace.converged, "iterations": trace.iterations,
           "n0": system.n0, "eps0": system.eps0, "M_D": system.M_D,
           "eps1": system.eps1, "h": system.h, "halvings": system.halvings}
    if cfg.get("probes"):
        doc["probes"] = {
            f"{x0},{i0}": system.interpolate(u[int(i0) - 1], float(x0))
            for x0, i0 in cfg["probes"]
        }
    write_json_atomic(out / "exit_time.json", doc)
    manifest.add("exit_time.json")


def _task_recurrence(cfg, out: Path, manifest: Manifest) -> None:
    b, sigma, rates = _build_coefficients(cfg)
    verdict = elliptic.recurrence_indicator(
        tuple(map(float, cfg["D1"])), [float(k) for k in cfg["k_schedule"]],
        int(cfg["K"]), b, sigma, rates, float(cfg["h"]),
        [(float(x), int(i)) for x, i in cfg["probes"]],
        tol_rec=float(cfg["tol_rec"]), fp_tol=float(cfg["tol"]),
        m_max=int(cfg["m_max"]))
    rows = []
    for k, vals in zip(verdict["ks"], verdict["probe_values"]):
        for key, v in sorted(vals.items()):
            x0, i0 = key.split(",")
            rows.append([repr(float(k)), x0, i0, repr(float(v))])
    _write_csv(out / "vcurve.csv", ["k", "x", "i", "v"], rows)
    manifest.add("vcurve.csv")
    write_json_atomic(out / "verdict.json", verdict)
    manifest.add("verdict.json")


_RUNNERS = {
    "simulate": _task_simulate,
    "scan": _task_scan,
    "dynkin": _task_dynkin,
    "hitting": _task_hitting,
    "tv": _task_tv,
    "exit-time": _task_exit_time,
    "recurrence": _task_recurrence,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one task; returns the process exit code (0 ok, 3 numeric failure)."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg.task, cfg.to_dict(), cfg.get("seed"), out)
    try:
        _RUNNERS[cfg.task](cfg, out, manifest)
    except ConfigError:
        manifest.finish(status="config-error")
        raise
    except Exception as exc:  # numeric failure: partial manifest, exit 3
        manifest.finish(status="failed", error=f"{type(exc).__name__}: {exc}")
        return 3
    manifest.finish(status="ok")
    return 0
