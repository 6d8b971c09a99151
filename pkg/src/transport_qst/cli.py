"""Command-line driver: simulate, reconstruct, estimate, analyze, concurrence.

Scenarios are JSON files (unknown keys are rejected). Exit codes: 1 for
configuration or input-format errors, 2 for numerical failures, 3 for I/O.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import krylov
from .entangle import (
    concurrence_transport_general,
    concurrence_transport_special,
    concurrence_x_state,
    wootters_full,
)
from .estimation import (
    EstimationProblem,
    estimate_degenerate,
    estimate_g_res_gamma_tilde,
    estimate_general,
    estimate_resonant,
    gamma_z_from_gamma_tilde,
    suggest_probe_times,
)
from .lindblad import Propagator, build_lindbladian, steady_state
from .model import (
    ELEMENT_INDEX,
    BathSpec,
    DensityOperator,
    SystemConfig,
    TransportQSTError,
    ValidationError,
    basis_state,
    bell_state,
    maximally_mixed,
    validity_check,
)
from .noisy import (
    NoiseModel,
    NoisyDerivativeEstimator,
    NoisyMeasurement,
    consistency_gates,
    measure,
    uniform_step,
)
from .qst import (
    RECONSTRUCTED,
    ReconstructionInput,
    completeness_report,
    reconstruct_state,
    steady_state_qst,
)
from .transport import TransportRecord, read_csv, transport_record, write_csv

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 1, 2, 3

STATE_COLUMNS = ["r00", "r01", "r10", "r11"] + [
    f"{part}_{name}" for name in ("alpha", "beta", "v", "x", "y", "z") for part in ("Re", "Im")]
OUTPUT_SELECTORS = ("trajectory", "transport")
BELL_NAMES = ("psi_plus", "psi_minus", "phi_plus", "phi_minus")


class ConfigError(ValidationError):
    pass


# --------------------------------------------------------------------------
# scenario configuration


def _check_keys(obj, allowed, where: str, required=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_points: int
    spacing: str = "linear"
    units: str = "absolute"

    def __post_init__(self):
        if self.spacing not in ("linear", "log"):
            raise ConfigError("time_grid.spacing must be 'linear' or 'log'")
        if self.units not in ("absolute", "inverse_gamma"):
            raise ConfigError("time_grid.units must be 'absolute' or 'inverse_gamma'")
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ConfigError("time_grid.n_points must be a positive integer")
        if self.t_start < 0 or self.t_end < self.t_start:
            raise ConfigError("time_grid needs 0 <= t_start <= t_end")
        if self.spacing == "log" and self.t_start <= 0:
            raise ConfigError("log spacing needs t_start > 0")

    def times(self, Gamma: float) -> np.ndarray:
        scale = 1.0 / Gamma if self.units == "inverse_gamma" else 1.0
        n = int(self.n_points)
        if self.spacing == "linear":
            t = np.linspace(self.t_start, self.t_end, n)
        else:
            t = np.geomspace(self.t_start, self.t_end, n)
        return t * scale


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemConfig
    initial_state: DensityOperator
    initial_label: str
    time_grid: TimeGrid
    pipeline: str = "exact"
    noise: NoiseModel | None = None
    derivative_estimator: NoisyDerivativeEstimator = field(default_factory=NoisyDerivativeEstimator)
    outputs: tuple[str, ...] = OUTPUT_SELECTORS
    k_max: int = 3
    reconstruction: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)
    description: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times(self.system.Gamma)


SCENARIO_KEYS = ("description", "system", "initial_state", "time_grid", "pipeline", "noise",
                 "outputs", "k_max", "reconstruction", "estimation")
SYSTEM_KEYS = ("eps", "baths", "u_int", "g_res", "g_off", "drive", "gamma_z")
BATH_KEYS = ("statistics", "gamma_bare", "temperature", "chem_potential", "gamma_plus", "gamma_minus")
GRID_KEYS = ("t_start", "t_end", "n_points", "spacing", "units")
NOISE_KEYS = ("current_std", "samples_per_point", "seed", "correlation_std", "window", "poly_order")
RECON_KEYS = ("level", "known", "mode")
ESTIMATION_KEYS = ("case", "probe_times", "n_probes", "gamma_tilde_known")
ESTIMATION_CASES = ("auto", "general", "resonant", "degenerate", "resonant_two")


def _parse_system(obj) -> SystemConfig:
    _check_keys(obj, SYSTEM_KEYS, "system", required=("eps", "baths"))
    baths = []
    for i, b in enumerate(obj["baths"]):
        if b is None:
            baths.append(None)
            continue
        _check_keys(b, BATH_KEYS, f"system.baths[{i}]")
        baths.append(BathSpec(**b))
    kw = {k: obj[k] for k in ("u_int", "g_res", "g_off", "drive", "gamma_z") if k in obj}
    return SystemConfig(eps=tuple(obj["eps"]), baths=tuple(baths), **kw)


def _parse_state(obj, n_qubits: int) -> tuple[DensityOperator, str]:
    if isinstance(obj, str):
        if obj == "ground":
            return basis_state("0" * n_qubits), obj
        if obj == "maximally_mixed":
            return maximally_mixed(n_qubits), obj
        if obj in BELL_NAMES:
            if n_qubits != 2:
                raise ConfigError("Bell states need two qubits")
            return bell_state(obj), obj
        if len(obj) == n_qubits and set(obj) <= {"0", "1"}:
            return basis_state(obj), obj
        raise ConfigError(f"unknown initial_state {obj!r}")
    _check_keys(obj, ("real", "imag"), "initial_state", required=("real",))
    m = np.asarray(obj["real"], dtype=float) + 1j * np.asarray(obj.get("imag", 0.0), dtype=float)
    if m.shape != (2 ** n_qubits,) * 2:
        raise ConfigError(f"initial_state matrix must be {2 ** n_qubits}x{2 ** n_qubits}")
    return DensityOperator(m), "explicit"


def parse_scenario(obj: dict) -> ScenarioConfig:
    _check_keys(obj, SCENARIO_KEYS, "scenario", required=("system", "time_grid"))
    system = _parse_system(obj["system"])
    rho0, label = _parse_state(obj.get("initial_state", "ground"), system.n_qubits)
    _check_keys(obj["time_grid"], GRID_KEYS, "time_grid", required=("t_start", "t_end", "n_points"))
    grid = TimeGrid(**obj["time_grid"])
    pipeline = obj.get("pipeline", "exact")
    if pipeline not in ("exact", "noisy"):
        raise ConfigError("pipeline must be 'exact' or 'noisy'")
    noise, est = None, NoisyDerivativeEstimator()
    if "noise" in obj:
        n = obj["noise"]
        _check_keys(n, NOISE_KEYS, "noise", required=("current_std",))
        est = NoisyDerivativeEstimator(**{k: n[k] for k in ("window", "poly_order") if k in n})
        noise = NoiseModel(**{k: n[k] for k in ("current_std", "samples_per_point", "seed",
                                                "correlation_std") if k in n})
    outputs = tuple(obj.get("outputs", OUTPUT_SELECTORS))
    bad = [o for o in outputs if o not in OUTPUT_SELECTORS]
    if bad:
        raise ConfigError(f"unknown output selectors {bad}; allowed {list(OUTPUT_SELECTORS)}")
    k_max = obj.get("k_max", 3)
    if k_max not in (0, 1, 2, 3):
        raise ConfigError("k_max must be 0..3")
    recon = obj.get("reconstruction", {})
    _check_keys(recon, RECON_KEYS, "reconstruction")
    if recon.get("mode", "trajectory") not in ("trajectory", "steady_state"):
        raise ConfigError("reconstruction.mode must be 'trajectory' or 'steady_state'")
    estimation = obj.get("estimation", {})
    _check_keys(estimation, ESTIMATION_KEYS, "estimation")
    if estimation.get("case", "auto") not in ESTIMATION_CASES:
        raise ConfigError(f"estimation.case must be one of {list(ESTIMATION_CASES)}")
    return ScenarioConfig(system, rho0, label, grid, pipeline, noise, est, outputs, k_max,
                          dict(recon), dict(estimation), obj.get("description", ""))


def bundled_configs() -> list[str]:
    root = resources.files("transport_qst") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(path: str) -> ScenarioConfig:
    """Read a scenario file; a bare name selects a bundled example."""
    p = Path(path)
    if not p.exists() and path in bundled_configs():
        text = (resources.files("transport_qst") / "configs" / f"{path}.json").read_text("utf-8")
    else:
        text = p.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(obj)


# --------------------------------------------------------------------------
# pipelines


def state_row(rho: DensityOperator) -> list[float]:
    m = rho.matrix
    row = [m[i, i].real for i in range(4)]
    for name in ("alpha", "beta", "v", "x", "y", "z"):
        z = m[ELEMENT_INDEX[name]]
        row += [z.real, z.imag]
    return row


def simulate(sc: ScenarioConfig, times=None):
    """States and transport on the scenario grid (noisy when the pipeline says so)."""
    L = build_lindbladian(sc.system)
    t = sc.times if times is None else np.asarray(times, dtype=float)
    states = Propagator(L).trajectory(sc.initial_state, t)
    exact = transport_record(t, states, L, sc.system, k_max=sc.k_max)
    gates = {}
    if sc.pipeline == "noisy":
        if sc.noise is None:
            raise ConfigError("noisy pipeline needs a 'noise' section")
        meas = measure(exact, sc.system, sc.noise, sc.derivative_estimator, sc.k_max)
        gates = consistency_gates(meas, sc.system)
        return L, states, meas.record, gates
    return L, states, exact, gates


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_report(path: Path, report: dict) -> None:
    path.write_text(json.dumps(_clean(report), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _element_value(state, name: str) -> float:
    if name.startswith("r"):
        return dict(zip(("r00", "r01", "r10", "r11"), state.populations.astuple()))[name]
    part, elem = name.split("_")
    e = state.coherences[f"{part} {elem}"]
    return e.value if e.status == RECONSTRUCTED else math.nan


REQUIRED_COLUMNS = {"populations": ["time", "I_L", "I_R"],
                    "imaginary": ["time", "I_L", "I_R", "dI_L", "dI_R"],
                    "full": ["time", "I_L", "I_R", "dI_L", "dI_R", "d2I_L", "d2I_R"]}


def load_transport(path: str, level: str) -> TransportRecord:
    cols, data = read_csv(path)
    missing = [c for c in REQUIRED_COLUMNS[level] if c not in cols]
    if "S_LR" not in cols and "I_LR" not in cols:
        missing.append("S_LR")
    if missing:
        raise ConfigError(f"{path}: missing columns {missing} for level {level!r}")
    return TransportRecord.from_table(cols, data)


def run_reconstruct(sc: ScenarioConfig, transport_path: str | None = None,
                    trajectory_path: str | None = None):
    level = sc.reconstruction.get("level", "full" if sc.k_max >= 2 else "populations")
    known = sc.reconstruction.get("known")
    if sc.reconstruction.get("mode") == "steady_state":
        return _reconstruct_steady(sc)
    truth = None
    gates = {}
    if transport_path is not None:
        record = load_transport(transport_path, level)
        if trajectory_path is not None:
            cols, data = read_csv(trajectory_path)
            truth = data[:, [cols.index(c) for c in STATE_COLUMNS]]
        if sc.pipeline == "noisy" and sc.noise is not None:
            f = sc.derivative_estimator.variance_factors(uniform_step(record.times), record.k_max)
            f[0] = 1.0
            meas = NoisyMeasurement(record, sc.noise.mean_std * np.sqrt(f),
                                    sc.noise.correlation_mean_std(sc.system))
            gates = consistency_gates(meas, sc.system)
    else:
        _, states, record, gates = simulate(sc)
        truth = np.array([state_row(s) for s in states])
    results = []
    for i in range(len(record)):
        inp = ReconstructionInput.from_record(record, i, sc.system, known)
        results.append(reconstruct_state(inp, level, sc.system, **gates))
    table = np.array([[_element_value(r, c) for c in STATE_COLUMNS] for r in results])
    report = {"command": "reconstruct", "pipeline": sc.pipeline, "level": level, "mode": "trajectory",
              "gates": gates, "states": [r.to_dict() for r in results]}
    if truth is not None:
        err = np.abs(table - truth)
        per = {c: (float(np.nanmax(err[:, j])) if np.any(np.isfinite(err[:, j])) else None)
               for j, c in enumerate(STATE_COLUMNS)}
        finite = [v for v in per.values() if v is not None]
        report["summary"] = {"max_abs_error": per,
                             "max_error_reconstructed": max(finite) if finite else None,
                             "median_population_error": float(np.median(np.max(err[:, :4], axis=1)))}
    return report, record.times, table


def _reconstruct_steady(sc: ScenarioConfig):
    L = build_lindbladian(sc.system)
    rho = steady_state(L)
    rec = transport_record([math.inf], [rho], L, sc.system, k_max=0)
    inp = ReconstructionInput.from_record(rec, 0, sc.system, known=("g_res", "g_off", "delta"))
    res = steady_state_qst(inp)
    table = np.array([[_element_value(res.state, c) for c in STATE_COLUMNS]])
    truth = np.array([state_row(rho)])
    err = np.abs(table - truth)
    report = {"command": "reconstruct", "pipeline": "exact", "mode": "steady_state",
              "gamma_tilde": res.gamma_tilde, "gamma_tilde_candidates": list(res.gamma_tilde_candidates),
              "gamma_tilde_true": sc.system.Gamma_tilde, "gamma_tilde_ambiguous": res.ambiguous,
              "Gamma_z_total_estimate": (None if res.gamma_tilde is None
                                         else gamma_z_from_gamma_tilde(res.gamma_tilde, sc.system)),
              "states": [res.state.to_dict()],
              "summary": {"max_abs_error": {c: (None if math.isnan(err[0, j]) else float(err[0, j]))
                                            for j, c in enumerate(STATE_COLUMNS)}}}
    return report, np.array([math.inf]), table


def _auto_case(cfg: SystemConfig) -> str:
    if cfg.g_off == 0 and cfg.delta == 0:
        return "resonant_two"
    if cfg.delta == 0 and cfg.energy_doubly == 0:
        return "degenerate"
    if cfg.g_off == 0:
        return "resonant"
    return "general"


def run_estimate(sc: ScenarioConfig) -> dict:
    cfg = sc.system
    if any(f != 0 for f in cfg.drive):
        raise ConfigError("parameter estimation assumes undriven qubits (drive = 0)")
    opts = sc.estimation
    case = opts.get("case", "auto")
    case = _auto_case(cfg) if case == "auto" else case
    if "probe_times" in opts:
        probes = np.asarray(opts["probe_times"], dtype=float)
    else:
        probes = suggest_probe_times(cfg, int(opts.get("n_probes", 5)))
    gt_known = bool(opts.get("gamma_tilde_known", False))
    if sc.pipeline == "noisy":
        # probes are read off the nearest points of the measured grid
        _, _, record, _ = simulate(replace(sc, k_max=3))
        idx = sorted({int(np.argmin(np.abs(record.times - p))) for p in probes})
    else:
        L = build_lindbladian(cfg)
        states = Propagator(L).trajectory(sc.initial_state, probes)
        record = transport_record(probes, states, L, cfg, k_max=3)
        idx = list(range(len(probes)))
    problem = EstimationProblem.from_record(record, idx, cfg)
    gt = cfg.Gamma_tilde if gt_known else None
    if case == "resonant_two":
        result = estimate_g_res_gamma_tilde(problem)
    elif case == "degenerate":
        result = estimate_degenerate(problem)
    elif case == "resonant":
        result = estimate_resonant(problem, gamma_tilde=gt)
    else:
        result = estimate_general(problem, gamma_tilde=gt)
    truth = {"g_res": abs(cfg.g_res), "g_off": abs(cfg.g_off), "delta": abs(cfg.delta),
             "energy": abs(cfg.energy_doubly), "gamma_tilde": cfg.Gamma_tilde}
    rel = {}
    for k, v in result.values.items():
        t = truth[k]
        rel[k] = None if not math.isfinite(v) else (abs(v - t) / abs(t) if t != 0 else abs(v))
    out = {"command": "estimate", "pipeline": sc.pipeline, "probe_times": record.times[idx]}
    out.update(result.to_dict())
    out["truth"] = truth
    out["relative_error"] = rel
    if "gamma_tilde" in result.values:
        out["Gamma_z_total_estimate"] = gamma_z_from_gamma_tilde(result.values["gamma_tilde"], cfg)
    return out


def run_analyze(sc: ScenarioConfig) -> dict:
    cfg = sc.system
    L = build_lindbladian(cfg)
    bases = krylov.krylov_bases(L, cfg)
    comp = completeness_report(cfg)
    spec = krylov.spectral_analysis(L, config=cfg)
    return {"command": "analyze", "validity_warnings": validity_check(cfg),
            "krylov_dimensions": {b.label: b.dimension for b in bases},
            "completeness": comp.to_dict(), "spectral": spec.to_dict()}


def run_concurrence(sc: ScenarioConfig):
    cfg = sc.system
    if cfg.n_qubits != 2:
        raise ConfigError("concurrence needs two qubits")
    L, states, record, _ = simulate(replace(sc, pipeline="exact"))
    x_shaped = all(v == "not_generated" for k, v in completeness_report(cfg).element_statuses().items()
                   if k in ("v", "x", "y", "z"))
    # the special formula also needs Re alpha = 0, which then persists for delta = 0
    special = (cfg.delta == 0 and cfg.g_off == 0 and cfg.g_res != 0
               and abs(sc.initial_state.matrix[1, 2].real) < 1e-12)
    rows, methods = [], set()
    for i, rho in enumerate(states):
        try:
            c_state = concurrence_x_state(rho)
        except ValidationError:
            c_state = wootters_full(rho)
        c_tr = math.nan
        if x_shaped and record.k_max >= (1 if special else 2):
            inp = ReconstructionInput.from_record(record, i, cfg)
            res = (concurrence_transport_special(inp) if special
                   else concurrence_transport_general(inp, x_shaped=x_shaped))
            c_tr = res.value
            methods.add(res.method)
        rows.append((record.times[i], c_state.value, c_tr))
    table = np.array(rows)
    c_ss = wootters_full(steady_state(L)).value
    report = {"command": "concurrence", "transport_methods": sorted(methods), "x_shaped": x_shaped,
              "final_state_concurrence": table[-1, 1], "final_transport_concurrence": table[-1, 2],
              "steady_state_concurrence": c_ss,
              "max_method_difference": (float(np.nanmax(np.abs(table[:, 1] - table[:, 2])))
                                        if np.any(np.isfinite(table[:, 2])) else None),
              "times": table[:, 0], "C_state": table[:, 1], "C_transport": table[:, 2]}
    return report, table


# --------------------------------------------------------------------------
# entry point


DEFAULT_FORMAT = {"simulate": "csv", "reconstruct": "report", "estimate": "report",
                  "analyze": "report", "concurrence": "csv"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transport-qst",
                                description="Transport-based tomography of two-qubit open systems.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "write state trajectory and transport CSV files"),
                        ("reconstruct", "reconstruct states from transport data"),
                        ("estimate", "estimate couplings, detunings and dephasing"),
                        ("analyze", "Krylov/spectral observability report"),
                        ("concurrence", "state- and transport-based concurrence over time")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True,
                       help="scenario JSON file or bundled name (%s)" % ", ".join(bundled_configs()))
        s.add_argument("--out", default=".", help="output directory (created if missing)")
        s.add_argument("--pipeline", choices=("exact", "noisy"), help="override the scenario pipeline")
        s.add_argument("--seed", type=int, help="override the noise seed")
        s.add_argument("--format", choices=("csv", "report"), help="csv tables or JSON report")
        if name == "reconstruct":
            s.add_argument("--transport", help="transport CSV to reconstruct from instead of simulating")
            s.add_argument("--trajectory", help="ground-truth trajectory CSV for the error summary")
    return p


def _dispatch(args) -> None:
    sc = load_scenario(args.config)
    if args.pipeline:
        sc = replace(sc, pipeline=args.pipeline)
    if args.seed is not None:
        if sc.noise is None:
            raise ConfigError("--seed given but the scenario has no 'noise' section")
        sc = replace(sc, noise=replace(sc.noise, seed=args.seed))
    fmt = args.format or DEFAULT_FORMAT[args.command]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "simulate":
        _, states, record, _ = simulate(sc)
        if "trajectory" in sc.outputs:
            write_csv(out / "trajectory.csv", ["time"] + STATE_COLUMNS,
                      [[t] + state_row(s) for t, s in zip(record.times, states)])
        if "transport" in sc.outputs:
            record.to_csv(out / "transport.csv")
        if fmt == "report":
            write_report(out / "simulate.json", {"command": "simulate", "pipeline": sc.pipeline,
                                                 "n_points": len(record), "outputs": list(sc.outputs)})
    elif args.command == "reconstruct":
        report, times, table = run_reconstruct(sc, args.transport, args.trajectory)
        if fmt == "csv":
            write_csv(out / "reconstruction.csv", ["time"] + STATE_COLUMNS,
                      np.column_stack([times, table]))
        else:
            write_report(out / "reconstruction.json", report)
    elif args.command == "estimate":
        report = run_estimate(sc)
        if fmt == "csv":
            keys = list(report["values"])
            write_csv(out / "estimation.csv", keys, [[report["values"][k] for k in keys]])
        else:
            write_report(out / "estimation.json", report)
    elif args.command == "analyze":
        write_report(out / "analysis.json", run_analyze(sc))
    else:
        report, table = run_concurrence(sc)
        if fmt == "csv":
            write_csv(out / "concurrence.csv", ["time", "C_state", "C_transport"], table)
        else:
            write_report(out / "concurrence.json", report)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TransportQSTError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
