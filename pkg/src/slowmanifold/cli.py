"""Batch front-end: config-driven experiments with deterministic outputs.

Subcommands
-----------
gap       evaluate the spectral-gap condition, emit a JSON report
simulate  sample noise and integrate the pathwise equation, emit CSVs
manifold  solve the graph over sample points, emit CSV + JSON sidecar
reduce    integrate the graph-closed center dynamics, emit CSV
attract   ensemble of off-manifold runs, decay-rate fits, emit JSON + CSVs
residual  invariance-residual decay or approximation-order fit, emit JSON

Every run validates the full config against the module preconditions before
any computation starts, and every output embeds the sha256 of the canonical
config plus the effective seed, so a rerun with the same inputs is
byte-identical.  Exit codes: 0 success (and gap satisfied), 1 validation
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .noise import NoiseError, TimeGrid, make_noise, path_seed, export_csv
from .spectral import (
    GapConditionError,
    SpectralGapError,
    builtin_coupled_slow,
    builtin_damped_wave,
    builtin_reaction_diffusion,
    gap_condition,
    split_spectrum,
)
from .evolve import BlowUpError, integrate_mild, trajectory_csv
from .lyapunov_perron import ConvergenceError, ManifoldSolver, WindowError, manifold_graph
from .expansion import coupled_slow_manifold, invariance_residual, order_fit, reaction_diffusion_expansion
from .attraction import FitError, fit_decay, integrate_reduced, stable_defect

VALIDATION_ERRORS = (NoiseError, SpectralGapError, GapConditionError, WindowError, ValueError, KeyError)
NUMERICAL_ERRORS = (ConvergenceError, BlowUpError, FitError, FloatingPointError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config parse error: {err}")


def config_hash(cfg: dict, seed: int) -> str:
    canon = json.dumps({"config": cfg, "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _require(cfg: dict, section: str, keys=()) -> dict:
    if section not in cfg:
        raise ConfigError(f"missing [{section}] section")
    sub = cfg[section]
    for k in keys:
        if k not in sub:
            raise ConfigError(f"missing key '{k}' in [{section}]")
    return sub


def build_model(cfg: dict):
    m = _require(cfg, "model", ["kind"])
    kind = m["kind"]
    sigma = float(m.get("sigma", 0.0))
    cutoff = m.get("cutoff_radius", None)
    cutoff = None if cutoff in (0, 0.0, False) else cutoff
    kwargs = {} if cutoff is None and "cutoff_radius" not in m else {"cutoff_radius": cutoff}
    if kind == "reaction_diffusion":
        return builtin_reaction_diffusion(float(m.get("a", 0.01)), sigma, int(m.get("n_modes", 8)), **kwargs)
    if kind == "damped_wave":
        return builtin_damped_wave(sigma, int(m.get("n_modes", 4)), float(m.get("f_coeff", 0.02)), **kwargs)
    if kind == "coupled_slow":
        return builtin_coupled_slow(float(m.get("a", 0.0)), sigma, int(m.get("n_modes", 3)), **kwargs)
    raise ConfigError(f"unknown model kind {kind!r}")


def build_split(cfg: dict, model):
    t = _require(cfg, "trichotomy", ["gamma", "beta"])
    alpha = float(t.get("alpha", np.inf))
    return split_spectrum(model, float(t["gamma"]), alpha, float(t["beta"]))


def build_noise(cfg: dict, seed: int):
    n = _require(cfg, "noise", ["dt"])
    return make_noise(
        t_back=float(n.get("t_back", 0.0)),
        t_fwd=float(n.get("t_fwd", 1.0)),
        dt=float(n["dt"]),
        seed=seed,
        mu=float(n.get("mu", 1.0)),
        phi_rates=[float(r) for r in n.get("phi_rates", [])],
    )


def effective_seed(cfg: dict, args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(cfg.get("noise", {}).get("seed", 0))


def _solver_params(cfg: dict):
    s = _require(cfg, "solver", ["eta", "window"])
    return {
        "eta": float(s["eta"]),
        "window": float(s["window"]),
        "tol": float(s.get("tol", 1e-12)),
        "max_iter": int(s.get("max_iter", 200)),
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gap(cfg: dict, args) -> int:
    model = build_model(cfg)
    split = build_split(cfg, model)
    s = _require(cfg, "solver", ["eta"])
    k_order = int(s.get("k_order", 1))
    report = gap_condition(split, model.lipschitz_bound, float(s["eta"]), k_order)
    lo, hi = split.gamma, min(split.alpha, split.beta) / k_order
    payload = {
        "eta": report.eta,
        "k_order": report.k_order,
        "lhs_values": list(report.lhs_values),
        "satisfied": report.satisfied,
        "admissible_eta": [lo, hi],
        "lipschitz_bound": model.lipschitz_bound,
        "bound_K": split.bound_K,
        "eigenvalues": model.eigenvalues.tolist(),
        "split": {
            "center": [k + 1 for k in split.center_idx],
            "stable": [k + 1 for k in split.stable_idx],
            "unstable": [k + 1 for k in split.unstable_idx],
            "gamma": split.gamma,
            "alpha": split.alpha,
            "beta": split.beta,
        },
        "config_sha256": config_hash(cfg, effective_seed(cfg, args)),
    }
    _write_json(os.path.join(args.out, "gap.json"), payload)
    print(f"gap lhs (i=1..{k_order}): {', '.join(f'{v:.6g}' for v in report.lhs_values)}; "
          f"admissible eta interval ({lo:.6g}, {hi:.6g}); satisfied: {report.satisfied}")
    return 0 if report.satisfied else 1


def cmd_simulate(cfg: dict, args) -> int:
    model = build_model(cfg)
    seed = effective_seed(cfg, args)
    noise = build_noise(cfg, seed)
    sim = _require(cfg, "simulate", ["horizon", "u0"])
    u0 = np.asarray([float(x) for x in sim["u0"]], dtype=float)
    if u0.size != model.n_modes:
        raise ConfigError(f"u0 must have {model.n_modes} entries")
    horizon = float(sim["horizon"])
    dt = noise.grid.dt
    traj = integrate_mild(model, noise.z, u0, TimeGrid(0.0, horizon, int(round(horizon / dt))))
    export_csv(noise, os.path.join(args.out, "noise.csv"))
    trajectory_csv(traj, os.path.join(args.out, "trajectory.csv"))
    _write_json(os.path.join(args.out, "simulate.json"),
                {"seed": seed, "config_sha256": config_hash(cfg, seed), "final_norm": float(np.linalg.norm(traj.states[-1]))})
    print(f"integrated {model.name} to t={horizon:g}; |u(T)| = {np.linalg.norm(traj.states[-1]):.6g}")
    return 0


def _graph_from_config(cfg: dict, model, split, noise, sp=None):
    sp = sp or _solver_params(cfg)
    samples = _require(cfg, "solver", ["samples"])["samples"]
    solver = ManifoldSolver(model, split, noise.z, **sp)
    delta = cfg["solver"].get("tangency_delta", None)
    return manifold_graph(solver, np.asarray(samples, dtype=float),
                          tangency_delta=float(delta) if delta else None)


def cmd_manifold(cfg: dict, args) -> int:
    model = build_model(cfg)
    split = build_split(cfg, model)
    seed = effective_seed(cfg, args)
    noise = build_noise(cfg, seed)
    graph = _graph_from_config(cfg, model, split, noise)

    noncenter = [k for k in range(model.n_modes) if k not in split.center_idx]
    path = os.path.join(args.out, "graph.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"v_{i + 1}" for i in range(graph.center_dim)] + [f"h_{i + 1}" for i in range(len(noncenter))])
        for v, h in zip(graph.sample_points, graph.values):
            writer.writerow([f"{x:.17g}" for x in v] + [f"{h[k]:.17g}" for k in noncenter])
    sidecar = {
        "eta": graph.eta,
        "window": graph.window,
        "tol": _solver_params(cfg)["tol"],
        "seed": seed,
        "h_column_modes": [k + 1 for k in noncenter],
        "config_sha256": config_hash(cfg, seed),
    }
    sidecar.update(graph.diagnostics)
    _write_json(os.path.join(args.out, "graph.json"), sidecar)
    print(f"graph over {len(graph.sample_points)} samples; contraction ratio "
          f"{graph.diagnostics['contraction_ratio']:.3g} (ceiling {graph.diagnostics['contraction_ceiling']:.3g})")
    return 0


def cmd_reduce(cfg: dict, args) -> int:
    model = build_model(cfg)
    split = build_split(cfg, model)
    seed = effective_seed(cfg, args)
    noise = build_noise(cfg, seed)
    red = _require(cfg, "reduce", ["horizon", "v0"])
    v0 = np.atleast_1d(np.asarray(red["v0"], dtype=float))
    provider = red.get("provider", "lp")
    if provider == "lp":
        graph = _graph_from_config(cfg, model, split, noise)
    elif provider == "expansion":
        graph = _expansion_for(cfg, model, noise)
    else:
        raise ConfigError(f"unknown reduced-graph provider {provider!r}")
    horizon = float(red["horizon"])
    dt = noise.grid.dt
    traj = integrate_reduced(model, graph, noise.z, v0, TimeGrid(0.0, horizon, int(round(horizon / dt))), split=split)
    trajectory_csv(traj, os.path.join(args.out, "reduced.csv"))
    _write_json(os.path.join(args.out, "reduce.json"),
                {"seed": seed, "config_sha256": config_hash(cfg, seed), "final": traj.states[-1].tolist()})
    print(f"reduced flow to t={horizon:g}; v(T) = {traj.states[-1]}")
    return 0


def _expansion_for(cfg: dict, model, noise):
    if model.name == "reaction_diffusion":
        a = model.meta["a"]
        sigma = model.noise_intensity
        phi3 = noise.phis.get(8.0) if sigma else None
        if sigma and phi3 is None:
            raise ConfigError("expansion provider with sigma != 0 needs phi_rates = [8.0] in [noise]")
        return reaction_diffusion_expansion(a, sigma, phi3, n_modes=model.n_modes)
    if model.name == "coupled_slow":
        return coupled_slow_manifold(model, noise.z)
    raise ConfigError(f"no closed-form expansion for model {model.name!r}")


def _fit_selftest() -> None:
    t = np.linspace(0, 5, 60)
    fit = fit_decay(t, 3.0 * np.exp(-2.0 * t))
    if abs(fit.prefactor - 3.0) > 1e-9 or abs(fit.rate - 2.0) > 1e-9:
        raise ConvergenceError("decay-fit self-test failed")


def _attract_one_path(payload):
    """One off-manifold run: returns (path index, fitted rate, drift estimate, series)."""
    cfg, base_seed, p = payload
    model = build_model(cfg)
    split = build_split(cfg, model)
    at = cfg["attract"]
    sp = _solver_params(cfg)
    kick_mode = int(at["kick_mode"]) - 1
    kick = float(at["kick_size"])
    v0 = np.atleast_1d(np.asarray(at["v0"], dtype=float))
    horizon = float(at["horizon"])
    fit_lo, fit_hi = [float(x) for x in at.get("fit_window", [0.0, horizon])]

    noise = build_noise(cfg, path_seed(base_seed, p))
    solver = ManifoldSolver(model, split, noise.z, **sp)
    u0 = np.zeros(model.n_modes)
    u0[list(split.center_idx)] = v0
    u0 = u0 + solver.point(v0)
    u0[kick_mode] += kick
    dt = noise.grid.dt
    traj = integrate_mild(model, noise.z, u0, TimeGrid(0.0, horizon, int(round(horizon / dt))))
    graph = manifold_graph(solver, v0[None, :])
    series = stable_defect(traj, graph, split, noise.z, model=model,
                           stride=int(at.get("stride", 250)), solver_tol=sp["tol"])
    mask = (series.times >= fit_lo) & (series.times <= fit_hi)
    fit = fit_decay(series.times[mask], series.values[mask],
                    floor=float(at.get("floor", 1e-10)) * abs(kick))
    from .attraction import epsilon_estimate

    eps = epsilon_estimate(noise.z, model.noise_intensity)
    return p, fit.rate, eps, (series.times.tolist(), series.values.tolist())


def cmd_attract(cfg: dict, args) -> int:
    _fit_selftest()
    base_seed = effective_seed(cfg, args)
    _require(cfg, "attract", ["horizon", "kick_mode", "kick_size", "v0"])
    _solver_params(cfg)
    build_split(cfg, build_model(cfg))  # validate before spawning workers
    ensemble = int(cfg.get("noise", {}).get("ensemble", 1))
    if ensemble < 1:
        raise ConfigError("ensemble size must be >= 1")

    jobs = [(cfg, base_seed, p) for p in range(ensemble)]
    threads = max(1, int(getattr(args, "threads", 1) or 1))
    if threads > 1 and ensemble > 1:
        import multiprocessing

        with multiprocessing.Pool(threads) as pool:
            results = pool.map(_attract_one_path, jobs)
    else:
        results = [_attract_one_path(job) for job in jobs]
    results.sort(key=lambda r: r[0])
    rates = [r[1] for r in results]
    eps_values = [r[2] for r in results]

    times0, vals0 = results[0][3]
    with open(os.path.join(args.out, "defect_path0.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "defect"])
        for trow, xrow in zip(times0, vals0):
            w.writerow([f"{trow:.17g}", f"{xrow:.17g}"])

    payload = {
        "seed": base_seed,
        "ensemble": ensemble,
        "rates": rates,
        "median_rate": float(np.median(rates)),
        "epsilon_estimates": eps_values,
        "config_sha256": config_hash(cfg, base_seed),
    }
    _write_json(os.path.join(args.out, "attract.json"), payload)
    print(f"median fitted decay rate over {ensemble} paths: {np.median(rates):.4g}")
    return 0


def cmd_residual(cfg: dict, args) -> int:
    model = build_model(cfg)
    seed = effective_seed(cfg, args)
    noise = build_noise(cfg, seed)
    res = _require(cfg, "residual", ["kind"])
    kind = res["kind"]
    if kind == "invariance":
        g = _expansion_for(cfg, model, noise)
        v0 = np.atleast_1d(np.asarray(res["v0"], dtype=float))
        probes = [float(x) for x in res.get("dt_probes", [1e-2, 1e-3, 1e-4])]
        norms = []
        state_norm = float(np.linalg.norm(np.concatenate([v0, g.evaluate(v0, 0.0)[len(v0):]])))
        for dtp in probes:
            r = invariance_residual(g, model, noise.z, v0, dtp)
            norms.append(float(np.linalg.norm(r)))
        slope = float(np.polyfit(np.log(probes), np.log(np.maximum(norms, 1e-300)), 1)[0])
        payload = {
            "dt_probes": probes,
            "residual_norms": norms,
            "loglog_slope": slope,
            "state_norm": state_norm,
            "relative_at_finest": norms[-1] / state_norm if state_norm else float("nan"),
            "seed": seed,
            "config_sha256": config_hash(cfg, seed),
        }
        _write_json(os.path.join(args.out, "residual.json"), payload)
        print(f"invariance residual slope {slope:.3g}; finest relative residual "
              f"{payload['relative_at_finest']:.3g}")
        return 0
    if kind == "order":
        split = build_split(cfg, model)
        graph = _graph_from_config(cfg, model, split, noise)
        g = _expansion_for(cfg, model, noise)
        amps = [float(x) for x in _require(cfg, "residual", ["amplitudes"])["amplitudes"]]
        fit = order_fit(g, graph, amps, target_order=int(res.get("q", g.order)))
        from .expansion import ExpansionGraph

        zero = ExpansionGraph(n_modes=model.n_modes, center_indices=g.center_indices,
                              terms=(), order=3)
        fit0 = order_fit(zero, graph, amps, target_order=int(res.get("q_zero", 3)))
        payload = {"expansion_fit": fit.to_dict(), "zero_graph_fit": fit0.to_dict(),
                   "seed": seed, "config_sha256": config_hash(cfg, seed)}
        _write_json(os.path.join(args.out, "order_fit.json"), payload)
        print(f"order fit: slope {fit.slope:.3g} (target {fit.target_order}), "
              f"zero-graph slope {fit0.slope:.3g}")
        return 0
    raise ConfigError(f"unknown residual kind {kind!r}")


# ---------------------------------------------------------------------------
# entry point


COMMANDS = {
    "gap": cmd_gap,
    "simulate": cmd_simulate,
    "manifold": cmd_manifold,
    "reduce": cmd_reduce,
    "attract": cmd_attract,
    "residual": cmd_residual,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slowmanifold",
                                description="stochastic center/slow manifold experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override [noise].seed")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg, args)
    except NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except (ConfigError,) + VALIDATION_ERRORS as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
