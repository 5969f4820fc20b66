"""Command line front end: desk-scale experiment recipes with CSV/JSON output.

Every command resolves its parameters from defaults, an optional INI config
file, and command line flags (highest precedence), echoes the resolved set
in its output header, and writes deterministic results for a fixed seed.
Exit codes: 0 success, 2 validation error, 3 budget-limited result.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy.linalg import eigh

from . import __version__
from .adaptive import (MeasurementPlan, mse_curve as _plan_mse_curve,
                       new_plan, optimize_plan, rank_partitions,
                       select_best_partition)
from .clock import PROTOCOLS as CLOCK_PROTOCOLS
from .clock import ClockConfig, allan_curve, fundamental_limit
from .errors import BudgetExceeded
from .noise import NoiseModel, fit_gain_decay, noisy_plan_bmse, reoptimize_under_noise
from .oqi import OqiSolution, oqi_prior_for, propagate, solve_oqi
from .partitions import Partition, count_partitions, enumerate_partitions
from .prior import PriorGrid, default_node_count, gaussian_prior, uniform_prior
from .schemes import (FixedBlockConfig, MCConfig, VaryingBlockConfig,
                      css_bmse, fixed_block_bmse,
                      fixed_block_rbmse_prediction, ghz_parity_bmse,
                      metrological_gain_db, plateau_hl, plateau_sql,
                      qcrb_bound, varying_block_bmse, varying_block_prior)
from .schemes import _folded_kernels, _binom_pmf
from .unwind import best_baseline_allocation, best_unwind_partition

__all__ = ["ExperimentSpec", "ResultRecord", "run", "mse_curve", "main"]

COMMANDS = ("partitions", "oqi", "optimize", "sweep-prior", "scaling",
            "unwind", "clock", "noise", "plateau")


# ---------------------------------------------------------------------------
# parameter schema, spec, and record types


@dataclass(frozen=True)
class ExperimentSpec:
    """One resolved run request: the command plus its full parameter set."""

    command: str
    parameters: dict

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"command: unknown command {self.command!r}")


@dataclass
class ResultRecord:
    """Outputs of one run: input echo, scalars, curves, and provenance."""

    inputs: dict
    outputs: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    partition: str | None = None
    plan: dict | None = None
    standard_errors: dict = field(default_factory=dict)
    wall_time: float = 0.0
    budget_ok: bool = True

    def set_gain(self, reference: float, value: float) -> None:
        gain = reference / value
        self.outputs["gain"] = gain
        self.outputs["gain_db"] = metrological_gain_db(gain)

    def to_json_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "outputs": self.outputs,
            "curves": {k: {c: list(v) for c, v in cols.items()}
                       for k, cols in self.curves.items()},
            "partition": self.partition,
            "plan": self.plan,
            "standard_errors": self.standard_errors,
            "wall_time": self.wall_time,
            "budget_ok": self.budget_ok,
        }


class _Schema:
    """Flag registry: drives argparse, config merging, and validation."""

    def __init__(self) -> None:
        self.fields: dict[str, tuple] = {}

    def add(self, name: str, kind, default, help_text: str):
        self.fields[name] = (kind, default, help_text)
        return self

    def install(self, parser: argparse.ArgumentParser) -> None:
        for name, (kind, _default, help_text) in self.fields.items():
            flag = "--" + name.replace("_", "-")
            if kind is bool:
                parser.add_argument(flag, action="store_const", const=True,
                                    default=None, help=help_text)
            else:
                parser.add_argument(flag, type=str, default=None,
                                    help=help_text)

    def resolve(self, command: str, args: argparse.Namespace,
                config: configparser.ConfigParser | None) -> dict:
        resolved = {}
        problems = []
        for name, (kind, default, _help) in self.fields.items():
            raw = getattr(args, name, None)
            if raw is None and config is not None:
                for section in (command, "global"):
                    if config.has_option(section, name):
                        raw = config.get(section, name)
                        break
            if raw is None:
                resolved[name] = default
                continue
            try:
                if kind is bool and isinstance(raw, str):
                    resolved[name] = raw.strip().lower() in ("1", "true",
                                                             "yes", "on")
                else:
                    resolved[name] = raw if kind is bool else kind(raw)
            except (TypeError, ValueError) as exc:
                problems.append(f"{command}.{name}: {exc}")
        if problems:
            raise ValueError("; ".join(problems))
        return resolved


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(","))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _value_range(text: str) -> tuple[float, ...]:
    """Parse "lo:hi:logK", "lo:hi:linK", "a,b,c", or a single number."""
    if ":" in text:
        lo_s, hi_s, spec = text.split(":")
        lo, hi = float(lo_s), float(hi_s)
        if spec.startswith("log"):
            return tuple(np.geomspace(lo, hi, int(spec[3:])))
        if spec.startswith("lin"):
            return tuple(np.linspace(lo, hi, int(spec[3:])))
        raise ValueError(f"range spec must end in logK or linK: {text!r}")
    return _float_list(text)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"must be a positive integer: {text!r}")
    return value


def _choice(*options: str):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {options}: {text!r}")
        return text
    return parse


# ---------------------------------------------------------------------------
# output plumbing


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: str, spec: ExperimentSpec, columns: dict) -> None:
    """Metadata as '#' comment lines, then an RFC-4180 table.

    The body (non-comment lines) is byte-identical across reruns with the
    same resolved parameters; only the '# generated' line varies.
    """
    names = list(columns)
    rows = zip(*(columns[name] for name in names))
    buffer = io.StringIO()
    writer = csv.writer(buffer, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([_fmt(cell) for cell in row])
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# ghzbayes {spec.command} v{__version__}\n")
        handle.write(f"# generated {stamp}\n")
        for key in sorted(spec.parameters):
            handle.write(f"# {key}={_fmt(spec.parameters[key])}\n")
        handle.write(buffer.getvalue())


def _write_gnuplot(csv_path: str, x_column: str, y_columns: list,
                   logscale: str = "") -> str:
    """Companion gnuplot script next to a CSV file; returns its path."""
    gp_path = csv_path + ".gp"
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x_column}'",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    plots = ", ".join(f"'{os.path.basename(csv_path)}' using "
                      f"'{x_column}':'{name}' with linespoints"
                      for name in y_columns)
    lines.append("plot " + plots)
    with open(gp_path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    return gp_path


def _write_json_file(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


# ---------------------------------------------------------------------------
# shared modelling helpers


def _make_prior(kind: str, delta_phi: float, max_frequency: float) -> PriorGrid:
    if kind == "gaussian":
        return gaussian_prior(delta_phi, max_frequency=max_frequency)
    # flat prior over [-pi/2, pi/2]: the wide-prior benchmark interval
    return uniform_prior(-math.pi / 2.0, math.pi / 2.0,
                         max_frequency=max_frequency)


def _oqi_prior(kind: str, n_total: int, delta_phi: float) -> PriorGrid:
    if kind == "gaussian":
        return oqi_prior_for(n_total, delta_phi)
    return uniform_prior(-math.pi / 2.0, math.pi / 2.0,
                         max_frequency=float(n_total))


def _css_estimators(n_total: int, prior: PriorGrid):
    if prior.kind in ("gaussian", "uniform"):
        node_count = max(512, default_node_count(
            2.0 * math.pi, 4.0 * math.sqrt(n_total)))
        theta, u, k0, k1, _k2 = _folded_kernels(prior, node_count)
        w0, w1 = u * k0, u * k1
    else:
        theta = prior.nodes
        w0 = prior.pweights
        w1 = w0 * theta
    pmf = _binom_pmf(np.arange(n_total + 1)[:, None], n_total,
                     np.sin(0.5 * theta + 0.25 * math.pi)[None, :] ** 2)
    b = pmf @ w0
    a = pmf @ w1
    safe = np.where(b > 1e-300, b, 1.0)
    return np.where(b > 1e-300, a / safe, 0.0)


def mse_curve(obj, prior: PriorGrid, phi_values) -> np.ndarray:
    """Per-phase MSE of a plan, a CSS readout, or an optimal-probe solve.

    obj is a MeasurementPlan (its own prior sets the estimators), an int
    (atom count of a spin-coherent readout), or an OqiSolution.
    """
    phi = np.atleast_1d(np.asarray(phi_values, dtype=float))
    if isinstance(obj, MeasurementPlan):
        return _plan_mse_curve(obj, phi)
    if isinstance(obj, (int, np.integer)):
        estimators = _css_estimators(int(obj), prior)
        q = np.sin(0.5 * phi + 0.25 * math.pi) ** 2
        pmf = _binom_pmf(np.arange(int(obj) + 1)[:, None], int(obj),
                         q[None, :])
        err = (phi[None, :] - estimators[:, None]) ** 2
        return np.einsum("xp,xp->p", pmf, err)
    if isinstance(obj, OqiSolution):
        values, vectors = eigh(obj.L)
        curve = np.empty(phi.size)
        for i, p in enumerate(phi):
            rho_phi = propagate(obj.rho, float(p))
            probs = np.einsum("ij,jk,ki->i", vectors.conj().T, rho_phi,
                              vectors).real
            curve[i] = float(probs @ (p - values) ** 2)
        return curve
    raise ValueError(f"mse_curve: unsupported object {type(obj).__name__}")


def _selection_kwargs(params: dict) -> dict:
    return {
        "mode": params["mode"],
        "top_k": params["top_k"],
        "k_cap": params["k_cap"],
        "optimizer_kwargs": {
            "restarts": params["restarts"],
            "seed": params["seed"],
            "max_steps": params["max_steps"],
        },
    }


# ---------------------------------------------------------------------------
# command handlers: each returns (record, curve specs for --out)


def _run_partitions(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    if p["delta_phi"] is not None:
        prior = gaussian_prior(p["delta_phi"],
                               max_frequency=float(min(p["n"], 64)))
        ranking, exhausted = rank_partitions(p["n"], prior,
                                             k_cap=p["k_cap"],
                                             budget=p["budget"])
        record.budget_ok = not exhausted
        ranking = ranking[:p["top"]] if p["top"] else ranking
        record.curves["ranking"] = {
            "partition": [part.to_text() for part, _bound in ranking],
            "bound": [bound for _part, bound in ranking],
        }
        record.outputs["count"] = len(ranking)
        if ranking:
            record.partition = ranking[0][0].to_text()
    else:
        parts = enumerate_partitions(p["n"], k_cap=p["k_cap"],
                                     budget=p["budget"])
        total = count_partitions(p["n"], k_cap=p["k_cap"])
        record.budget_ok = len(parts) == total
        record.curves["partitions"] = {
            "partition": [part.to_text() for part in parts],
            "n_blocks": [part.n_blocks for part in parts],
            "max_block": [part.max_block_size for part in parts],
        }
        record.outputs["count"] = len(parts)
        record.outputs["count_total"] = total
    return record


def _run_oqi(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    prior = oqi_prior_for(p["n"], p["delta_phi"])
    solution = solve_oqi(p["n"], prior, tol=p["tol"],
                         max_iter=p["max_iter"], restarts=p["restarts"],
                         seed=p["seed"])
    record.outputs["bmse"] = solution.bmse
    record.outputs["rbmse"] = math.sqrt(solution.bmse)
    record.outputs["iterations"] = solution.iterations
    record.outputs["converged"] = solution.converged
    record.budget_ok = solution.converged
    return record


def _optimize_once(params: dict, prior: PriorGrid):
    """Select (or take) a partition and optimize its rotations."""
    if params["partition"]:
        part = Partition.from_text(params["partition"])
        if part.n_total != params["n"]:
            raise ValueError(f"partition: totals {part.n_total} qubits, "
                             f"expected n={params['n']}")
        plan = new_plan(part, prior)
        result = optimize_plan(plan, restarts=params["restarts"],
                               seed=params["seed"],
                               max_steps=params["max_steps"])
        return part, result.plan, result.bmse, result.converged, False
    selection = select_best_partition(params["n"], prior,
                                      **_selection_kwargs(params))
    converged = True
    return (selection.partition, selection.plan, selection.bmse, converged,
            selection.budget_exhausted)


def _run_optimize(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    prior = _make_prior(p["prior"], p["delta_phi"],
                        max_frequency=float(min(p["n"], 64)))
    part, plan, plan_bmse, converged, exhausted = _optimize_once(p, prior)
    record.partition = part.to_text()
    record.plan = plan.to_json_dict()
    record.budget_ok = converged and not exhausted
    reference = css_bmse(p["n"], prior)
    record.outputs["bmse"] = plan_bmse
    record.outputs["rbmse"] = math.sqrt(plan_bmse)
    record.outputs["css_bmse"] = reference
    record.set_gain(reference, plan_bmse)
    if p["with_oqi"]:
        oqi = solve_oqi(p["n"], _oqi_prior(p["prior"], p["n"],
                                           p["delta_phi"]))
        record.outputs["oqi_bmse"] = oqi.bmse
        record.outputs["overhead_vs_oqi"] = math.sqrt(plan_bmse / oqi.bmse)
    if p["mse_curve"]:
        lo, hi = prior.support
        phi = np.linspace(lo, hi, p["curve_points"])
        columns = {
            "phi": list(phi),
            "mse_proposed": list(mse_curve(plan, prior, phi)),
            "mse_css": list(mse_curve(p["n"], prior, phi)),
        }
        if p["with_oqi"]:
            columns["mse_oqi"] = list(mse_curve(oqi, prior, phi))
        record.curves["mse"] = columns
    return record


def _load_manifest(path: str) -> dict:
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    return {"points": {}}


def _run_sweep_prior(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    widths = _value_range(p["delta_phi"])
    manifest = _load_manifest(p["manifest"])
    points = manifest["points"]
    rows: list[dict] = []
    for width in widths:
        key = _fmt(float(width))
        if key in points:
            rows.append(points[key])
            continue
        prior = gaussian_prior(float(width),
                               max_frequency=float(min(p["n"], 64)))
        selection = select_best_partition(p["n"], prior,
                                          **_selection_kwargs(p))
        reference = css_bmse(p["n"], prior)
        row = {
            "delta_phi": float(width),
            "partition": selection.partition.to_text(),
            "bmse": selection.bmse,
            "rbmse_over_prior": math.sqrt(selection.bmse) / float(width),
            "css_bmse": reference,
            "gain": reference / selection.bmse,
            "budget_ok": not selection.budget_exhausted,
        }
        if p["with_oqi"]:
            row["oqi_bmse"] = solve_oqi(p["n"], oqi_prior_for(
                p["n"], float(width))).bmse
        points[key] = row
        rows.append(row)
        if p["manifest"]:
            _write_json_file(p["manifest"], manifest)
    names = list(rows[0])
    record.curves["sweep"] = {name: [row.get(name) for row in rows]
                              for name in names}
    record.budget_ok = all(row["budget_ok"] for row in rows)
    best = min(rows, key=lambda row: row["rbmse_over_prior"])
    record.outputs["min_rbmse_over_prior"] = best["rbmse_over_prior"]
    record.outputs["argmin_delta_phi"] = best["delta_phi"]
    record.partition = best["partition"]
    return record


_SCALING_SCHEMES = ("proposed", "css", "oqi", "ghz", "varying", "fixed",
                    "qcrb", "hl")


def _fixed_config_for(n: int) -> FixedBlockConfig | None:
    for k_max in range(1, 9):
        cfg = FixedBlockConfig.for_k_max(k_max)
        if cfg.n_total == n:
            return cfg
    return None


def _varying_config_for(n: int) -> VaryingBlockConfig | None:
    for k_max in range(0, 16):
        cfg = VaryingBlockConfig(k_max)
        if cfg.n_total == n:
            return cfg
        if cfg.n_total > n:
            return None
    return None


def _run_scaling(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    schemes = [name.strip() for name in p["schemes"].split(",")]
    unknown = [name for name in schemes if name not in _SCALING_SCHEMES]
    if unknown:
        raise ValueError(f"schemes: unknown {unknown}; "
                         f"choose from {_SCALING_SCHEMES}")
    n_values = _int_list(p["n"])
    mc = MCConfig(samples=p["samples"], seed=p["seed"])
    columns: dict[str, list] = {"n": list(n_values)}
    for scheme in schemes:
        columns[scheme] = []
    budget_ok = True
    for n in n_values:
        prior = _make_prior(p["prior"], p["delta_phi"],
                            max_frequency=float(min(n, 64)))
        for scheme in schemes:
            value = math.nan
            if scheme == "proposed":
                selection = select_best_partition(n, prior,
                                                  **_selection_kwargs(p))
                value = selection.bmse
                budget_ok = budget_ok and not selection.budget_exhausted
            elif scheme == "css":
                value = css_bmse(n, prior)
            elif scheme == "oqi":
                value = solve_oqi(n, _oqi_prior(p["prior"], n,
                                                p["delta_phi"])).bmse
            elif scheme == "ghz":
                value = ghz_parity_bmse(n, prior)
            elif scheme == "varying":
                cfg = _varying_config_for(n)
                if cfg is not None:
                    result = varying_block_bmse(cfg, varying_block_prior(
                        cfg, p["delta_phi"]) if p["prior"] == "gaussian"
                        else prior, mc=mc)
                    value = result.value
                    budget_ok = budget_ok and result.budget_ok
            elif scheme == "fixed":
                cfg = _fixed_config_for(n)
                if cfg is not None:
                    result = fixed_block_bmse(cfg, prior,
                                              estimator=p["estimator"],
                                              mc=mc)
                    value = result.value
                    budget_ok = budget_ok and result.budget_ok
            elif scheme == "qcrb":
                ranking, _ = rank_partitions(n, prior, k_cap=p["k_cap"])
                value = qcrb_bound(ranking[0][0]) if ranking else math.nan
            elif scheme == "hl":
                value = (math.pi / n) ** 2
            columns[scheme].append(value)
    record.curves["scaling"] = columns
    record.budget_ok = budget_ok
    if "proposed" in columns and "oqi" in columns:
        ratios = [math.sqrt(a / b) for a, b in zip(columns["proposed"],
                                                   columns["oqi"])
                  if math.isfinite(a) and math.isfinite(b)]
        if ratios:
            record.outputs["overhead_vs_oqi"] = float(np.exp(np.mean(
                np.log(ratios))))
    if "proposed" in columns:
        ratios = [math.sqrt(a) * n / math.pi for a, n in
                  zip(columns["proposed"], n_values) if math.isfinite(a)]
        record.outputs["overhead_vs_hl"] = float(np.exp(np.mean(
            np.log(ratios))))
    if "fixed" in columns:
        ratios = [math.sqrt(a) / fixed_block_rbmse_prediction(n)
                  for a, n in zip(columns["fixed"], n_values)
                  if math.isfinite(a)]
        if ratios:
            record.outputs["fixed_overhead_vs_prediction"] = float(
                np.exp(np.mean(np.log(ratios))))
    return record


def _run_unwind(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    prior = gaussian_prior(p["delta_phi"],
                           max_frequency=float(min(p["n"], 64)))
    mc = MCConfig(samples=p["samples"], seed=p["seed"])
    protocols = (("proposed", "adaptive", "nonadaptive")
                 if p["protocol"] == "all" else (p["protocol"],))
    for protocol in protocols:
        if protocol == "proposed":
            extended, value = best_unwind_partition(
                p["n"], prior, reuse=p["reuse"], k_cap=p["k_cap"],
                optimizer_kwargs={"restarts": p["restarts"],
                                  "seed": p["seed"],
                                  "max_steps": p["max_steps"]})
            record.partition = extended.to_text()
            record.outputs["proposed_bmse"] = value
            record.outputs["proposed_l_max"] = extended.l_max
            record.outputs["proposed_n_used"] = extended.n_total
        else:
            alloc, result = best_baseline_allocation(
                p["n"], prior, protocol=protocol, mc=mc)
            record.outputs[f"{protocol}_bmse"] = result.value
            record.standard_errors[f"{protocol}_bmse"] = (
                result.standard_error)
            record.outputs[f"{protocol}_levels"] = alloc.slow_levels
            record.outputs[f"{protocol}_copies"] = alloc.slow_copies
            record.budget_ok = record.budget_ok and result.budget_ok
    return record


def _run_clock(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    cfg = ClockConfig(gamma_lo=p["gamma_lo"], gamma_ind=p["gamma_ind"],
                      omega_a=p["omega_a"], n_atoms=p["n_atoms"],
                      protocol=p["protocol"])
    taus = _value_range(p["tau"])
    points = allan_curve(cfg, taus)
    record.curves["allan"] = {
        "tau": [point.tau for point in points],
        "T_opt": [point.t_opt for point in points],
        "sigma_y": [point.sigma_y for point in points],
        "protocol": [cfg.protocol] * len(points),
        "N": [cfg.n_atoms] * len(points),
    }
    if p["gamma_ind"] > 0.0:
        record.curves["allan"]["fundamental"] = [
            fundamental_limit(point.tau, cfg.n_atoms, cfg.gamma_ind,
                              cfg.omega_a) for point in points]
    record.outputs["sigma_y_last"] = points[-1].sigma_y
    record.outputs["t_opt_last"] = points[-1].t_opt
    return record


def _run_noise(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    prior = gaussian_prior(p["delta_phi"],
                           max_frequency=float(min(p["n"], 64)))
    if p["partition"]:
        part = Partition.from_text(p["partition"])
        if part.n_total != p["n"]:
            raise ValueError(f"partition: totals {part.n_total} qubits, "
                             f"expected n={p['n']}")
    else:
        ranking, _ = rank_partitions(p["n"], prior, k_cap=p["k_cap"])
        part = ranking[0][0]
    record.partition = part.to_text()
    base = optimize_plan(new_plan(part, prior), restarts=p["restarts"],
                         seed=p["seed"], max_steps=p["max_steps"])
    reference = css_bmse(p["n"], prior)
    record.outputs["noiseless_bmse"] = base.bmse
    record.outputs["css_bmse"] = reference
    f0_values = _value_range(p["f0"]) if p["f0"] else (1.0,)
    rows = {"f0": [], "bmse": [], "gain": []}
    for f0 in f0_values:
        noise = NoiseModel(p_a=p["p_a"], p_e=p["p_e"], f0=float(f0))
        if p["reoptimize"]:
            noisy = reoptimize_under_noise(base.plan, noise,
                                           restarts=p["restarts"],
                                           seed=p["seed"],
                                           max_steps=p["max_steps"]).bmse
        else:
            noisy = noisy_plan_bmse(base.plan, noise)
        rows["f0"].append(float(f0))
        rows["bmse"].append(noisy)
        rows["gain"].append(reference / noisy)
    record.curves["noise"] = rows
    record.set_gain(reference, rows["bmse"][-1])
    if p["fit"] and len(f0_values) >= 3:
        amp, decay = fit_gain_decay(zip(rows["f0"], rows["gain"]),
                                    variable="f0")
        record.outputs["fit_amplitude"] = amp
        record.outputs["fit_decay"] = decay
    return record


def _run_plateau(spec: ExperimentSpec) -> ResultRecord:
    p = spec.parameters
    record = ResultRecord(inputs=dict(p))
    widths = _value_range(p["delta_phi"])
    columns: dict[str, list] = {"delta_phi": list(map(float, widths))}
    if p["which"] in ("hl", "both"):
        columns["plateau_hl"] = [plateau_hl(w) for w in widths]
    if p["which"] in ("sql", "both"):
        columns["plateau_sql"] = [plateau_sql(w) for w in widths]
    record.curves["plateau"] = columns
    for name in ("plateau_hl", "plateau_sql"):
        if name in columns:
            record.outputs[f"{name}_last"] = columns[name][-1]
    return record


_HANDLERS = {
    "partitions": _run_partitions,
    "oqi": _run_oqi,
    "optimize": _run_optimize,
    "sweep-prior": _run_sweep_prior,
    "scaling": _run_scaling,
    "unwind": _run_unwind,
    "clock": _run_clock,
    "noise": _run_noise,
    "plateau": _run_plateau,
}


def run(spec: ExperimentSpec) -> ResultRecord:
    """Execute one resolved experiment; deterministic for a fixed seed."""
    start = time.perf_counter()
    record = _HANDLERS[spec.command](spec)
    record.wall_time = time.perf_counter() - start
    return record


# ---------------------------------------------------------------------------
# schemas per command


def _common(schema: _Schema, with_optimizer: bool = True) -> _Schema:
    schema.add("seed", int, 0, "RNG seed")
    if with_optimizer:
        schema.add("restarts", _positive_int, 4, "optimizer restarts")
        schema.add("max_steps", _positive_int, 2000, "optimizer step cap")
        schema.add("k_cap", int, None, "largest block exponent allowed")
    return schema


def _build_schemas() -> dict[str, _Schema]:
    schemas: dict[str, _Schema] = {}

    schema = _Schema()
    schema.add("n", _positive_int, None, "total qubit count (required)")
    schema.add("k_cap", int, None, "largest block exponent allowed")
    schema.add("budget", int, None, "enumeration budget")
    schema.add("delta_phi", float, None, "prior width; adds bound ranking")
    schema.add("top", int, None, "keep only the best entries")
    schemas["partitions"] = schema

    schema = _Schema()
    schema.add("n", _positive_int, None, "total qubit count (required)")
    schema.add("delta_phi", float, None, "prior width (required)")
    schema.add("tol", float, 1e-10, "convergence tolerance")
    schema.add("max_iter", _positive_int, 1000, "iteration cap")
    schema.add("restarts", _positive_int, 1, "random restarts")
    schema.add("seed", int, 0, "RNG seed")
    schemas["oqi"] = schema

    schema = _common(_Schema())
    schema.add("n", _positive_int, None, "total qubit count (required)")
    schema.add("delta_phi", float, None, "prior width (required)")
    schema.add("partition", str, None, "fixed partition text, e.g. 3x4+3x2+3x1")
    schema.add("mode", _choice("rank", "optimize-top-k", "optimize-all"),
               "optimize-top-k", "partition selection mode")
    schema.add("top_k", _positive_int, 3, "candidates optimized in top-k mode")
    schema.add("prior", _choice("gaussian", "flat"), "gaussian", "prior family")
    schema.add("with_oqi", bool, False, "also solve the optimal probe")
    schema.add("mse_curve", bool, False, "emit the per-phase MSE curve")
    schema.add("curve_points", _positive_int, 241, "curve grid size")
    schemas["optimize"] = schema

    schema = _common(_Schema())
    schema.add("n", _positive_int, None, "total qubit count (required)")
    schema.add("delta_phi", str, None, "width range, e.g. 0.01:2.0:log24")
    schema.add("mode", _choice("rank", "optimize-top-k", "optimize-all"),
               "rank", "partition selection mode")
    schema.add("top_k", _positive_int, 3, "candidates optimized in top-k mode")
    schema.add("with_oqi", bool, False, "also solve the optimal probe")
    schema.add("manifest", str, None, "resume file for partial sweeps")
    schemas["sweep-prior"] = schema

    schema = _common(_Schema())
    schema.add("n", str, None, "comma list of qubit counts (required)")
    schema.add("delta_phi", float, None, "prior width (required)")
    schema.add("schemes", str, "proposed,css,oqi", "comma list of schemes")
    schema.add("mode", _choice("rank", "optimize-top-k", "optimize-all"),
               "rank", "partition selection mode")
    schema.add("top_k", _positive_int, 3, "candidates optimized in top-k mode")
    schema.add("prior", _choice("gaussian", "flat"), "gaussian", "prior family")
    schema.add("estimator", _choice("bayes", "bit-by-bit"), "bayes",
               "fixed-block estimator")
    schema.add("samples", _positive_int, 200_000, "MC sample budget")
    schemas["scaling"] = schema

    schema = _common(_Schema())
    schema.add("n", _positive_int, None, "total qubit count (required)")
    schema.add("delta_phi", float, None, "prior width (required)")
    schema.add("protocol", _choice("proposed", "adaptive", "nonadaptive",
                                   "all"), "proposed", "unwinding protocol")
    schema.add("reuse", bool, False, "slow qubits reused across levels")
    schema.add("samples", _positive_int, 50_000, "MC sample budget")
    schemas["unwind"] = schema

    schema = _Schema()
    schema.add("protocol", _choice(*CLOCK_PROTOCOLS), "uncorrelated",
               "clock interrogation protocol")
    schema.add("n_atoms", _positive_int, None, "atom count (required)")
    schema.add("gamma_lo", float, 1.0, "oscillator linewidth")
    schema.add("gamma_ind", float, 0.0, "individual decay rate")
    schema.add("omega_a", float, 1.0, "atomic transition frequency")
    schema.add("tau", str, None, "total time range, e.g. 1e-3:1e2:log26")
    schemas["clock"] = schema

    schema = _common(_Schema())
    schema.add("n", _positive_int, None, "total qubit count (required)")
    schema.add("delta_phi", float, None, "prior width (required)")
    schema.add("partition", str, None, "fixed partition text")
    schema.add("p_a", float, 0.0, "amplitude-decay probability per qubit")
    schema.add("p_e", float, 0.0, "readout bit-flip probability per qubit")
    schema.add("f0", str, None, "preparation fidelity or range")
    schema.add("reoptimize", bool, False, "re-optimize rotations under noise")
    schema.add("fit", bool, False, "fit gain = A exp(-B (1-f0))")
    schemas["noise"] = schema

    schema = _Schema()
    schema.add("delta_phi", str, None, "width range (required)")
    schema.add("which", _choice("hl", "sql", "both"), "both",
               "which plateau laws to evaluate")
    schemas["plateau"] = schema

    return schemas


_REQUIRED = {
    "partitions": ("n",),
    "oqi": ("n", "delta_phi"),
    "optimize": ("n", "delta_phi"),
    "sweep-prior": ("n", "delta_phi"),
    "scaling": ("n", "delta_phi"),
    "unwind": ("n", "delta_phi"),
    "clock": ("n_atoms", "tau"),
    "noise": ("n", "delta_phi"),
    "plateau": ("delta_phi",),
}


# ---------------------------------------------------------------------------
# entry point


def _build_parser(schemas: dict[str, _Schema]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghzbayes",
        description="Bayesian phase estimation with blocks of GHZ states")
    parser.add_argument("--version", action="version",
                        version=f"ghzbayes {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, schema in schemas.items():
        sub = subparsers.add_parser(command)
        schema.install(sub)
        sub.add_argument("--config", type=str, default=None,
                         help="INI config file; flags override its values")
        sub.add_argument("--out", type=str, default=None,
                         help="CSV output path for curves")
        sub.add_argument("--gnuplot", action="store_true",
                         help="emit a gnuplot script next to --out")
        sub.add_argument("--json", action="store_true",
                         help="print a single JSON document to stdout")
    return parser


def _apply_thread_cap() -> None:
    cap = os.environ.get("GHZBAYES_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ValueError(f"GHZBAYES_THREADS must be a positive integer: "
                         f"{cap!r}")
    for name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS"):
        os.environ.setdefault(name, cap)


def _summarize(record: ResultRecord, stream) -> None:
    if record.partition:
        print(f"partition = {record.partition}", file=stream)
    for key, value in record.outputs.items():
        line = f"{key} = {_fmt(value)}"
        if key in record.standard_errors:
            line += f" +- {_fmt(record.standard_errors[key])}"
        print(line, file=stream)
    for name, columns in record.curves.items():
        rows = len(next(iter(columns.values()))) if columns else 0
        print(f"[curve {name}: {rows} rows x {list(columns)}]", file=stream)
    print(f"wall_time = {record.wall_time:.2f}s  budget_ok = "
          f"{record.budget_ok}", file=stream)


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    schemas = _build_schemas()
    parser = _build_parser(schemas)
    args = parser.parse_args(argv)
    command = args.command
    config = None
    if args.config:
        if not os.path.exists(args.config):
            print(f"error: {command}.config: no such file {args.config!r}",
                  file=sys.stderr)
            return 2
        config = configparser.ConfigParser()
        config.read(args.config)
    try:
        params = schemas[command].resolve(command, args, config)
        missing = [name for name in _REQUIRED[command]
                   if params.get(name) is None]
        if missing:
            raise ValueError("; ".join(
                f"{command}.{name}: required parameter missing"
                for name in missing))
        spec = ExperimentSpec(command=command, parameters=params)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        record = run(spec)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {command}: {exc}", file=sys.stderr)
        return 2
    if args.out and record.curves:
        name = next(iter(record.curves))
        _write_csv(args.out, spec, record.curves[name])
        if args.gnuplot:
            columns = list(record.curves[name])
            numeric = [c for c in columns[1:]
                       if isinstance(record.curves[name][c][0],
                                     (int, float, np.floating))]
            _write_gnuplot(args.out, columns[0], numeric or columns[1:2])
    if args.json:
        payload = {"spec": {"command": spec.command,
                            "parameters": spec.parameters},
                   "record": record.to_json_dict()}
        json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=str)
        print()
    else:
        _summarize(record, sys.stdout)
    return 0 if record.budget_ok else 3


if __name__ == "__main__":
    raise SystemExit(main())
