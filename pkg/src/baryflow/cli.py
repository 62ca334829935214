"""Command-line entry point.

Subcommands (each takes a JSON config file):

* ``barycenter`` — run an empirical or GMM barycenter flow, write the final
  measure/mixture, the objective trace CSV, and a run report.
* ``toy``        — location-scatter family comparison: run the selected
  solvers and write a per-solver distance-to-reference table.
* ``msda``       — synthetic (or CSV-backed) multi-source domain adaptation
  with the functional ablation table.
* ``gen``        — write generated datasets as CSV.
* ``validate``   — check a config file and exit.

Configs are validated strictly (unknown keys are rejected) before any work.
Exit codes: 0 success, 1 config error, 2 numerical failure. Machine-readable
output goes to files; stdout carries human-readable progress. Trace and
table CSVs are byte-stable for a fixed seed; wall-clock timings live in the
run report JSON only.
"""

from __future__ import annotations

import argparse
import csv as _csv
import json
import os
import dataclasses
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, ot
from .datasets import (
    AffineMap,
    default_affine_family,
    load_csv,
    pd_affine_family,
    save_csv,
    swiss_roll,
    location_scatter_family,
    synthetic_domain_specs,
    synthetic_msda,
)
from .flow_empirical import (
    EmpiricalFlowConfig,
    EmpiricalSampler,
    FullBatchSampler,
    GaussianSampler,
    GmmSampler,
    fixed_point_baseline,
    run_flow,
)
from .flow_gmm import (
    GmmFlowConfig,
    fixed_point_gaussian_barycenter,
    run_gmm_flow,
)
from .functionals import REPULSION_METRICS, FunctionalSpec
from .gaussian import (
    GaussianComponent,
    LabeledGMM,
    em_fit,
    load_gmm,
    sample_reparam,
    save_gmm,
)
from .measures import BarycentricCoordinates, EmpiricalMeasure, LabeledEmpiricalMeasure
from .pipeline import msda_adapt, snapshot, w2_to_reference

REPORT_SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# config plumbing

def _check_keys(d: dict, allowed, ctx: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{ctx}: unknown key(s) {unknown}")


def _get(d: dict, key: str, types, ctx: str, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{ctx}: missing required key {key!r}")
        return default
    val = d[key]
    if types is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{ctx}: key {key!r} must be a boolean")
        return val
    if types is float and isinstance(val, bool):
        raise ConfigError(f"{ctx}: key {key!r} must be a number")
    if types is float and isinstance(val, int):
        return float(val)
    if types is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{ctx}: key {key!r} must be an integer")
    if not isinstance(val, types):
        name = types.__name__ if isinstance(types, type) else str(types)
        raise ConfigError(f"{ctx}: key {key!r} must be of type {name}")
    return val


def _existing_path(raw: str, ctx: str) -> Path:
    p = Path(raw)
    if not p.exists():
        raise ConfigError(f"{ctx}: path {raw!r} does not exist")
    return p


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        with open(p) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def _parse_functional(d: dict, ctx: str, target_measure=None) -> FunctionalSpec:
    _check_keys(d, ["entropy_weight", "repulsion_weight", "repulsion_margin",
                    "repulsion_metric", "target_weight", "target_csv",
                    "internal_weight"], ctx)
    target_csv = _get(d, "target_csv", str, ctx)
    if target_csv is not None:
        target_measure = load_csv(_existing_path(target_csv, ctx))
        if isinstance(target_measure, LabeledEmpiricalMeasure):
            target_measure = target_measure.base
    metric = _get(d, "repulsion_metric", str, ctx, default="euclidean")
    if metric not in REPULSION_METRICS:
        raise ConfigError(f"{ctx}: repulsion_metric must be one of {REPULSION_METRICS}")
    try:
        return FunctionalSpec(
            entropy_weight=_get(d, "entropy_weight", float, ctx, 0.0),
            repulsion_weight=_get(d, "repulsion_weight", float, ctx, 0.0),
            repulsion_margin=_get(d, "repulsion_margin", float, ctx, 1.0),
            repulsion_metric=metric,
            target_weight=_get(d, "target_weight", float, ctx, 0.0),
            target_measure=target_measure,
            internal_weight=_get(d, "internal_weight", float, ctx, 0.0),
        )
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from None


def _parse_coordinates(cfg: dict, k: int, ctx: str) -> BarycentricCoordinates:
    coords = cfg.get("coordinates")
    if coords is None:
        return BarycentricCoordinates.uniform(k)
    if not isinstance(coords, list) or len(coords) != k:
        raise ConfigError(f"{ctx}: coordinates must be a list of {k} numbers")
    try:
        return BarycentricCoordinates(np.asarray(coords, dtype=float))
    except ValueError as e:
        raise ConfigError(f"{ctx}: coordinates: {e}") from None


INPUT_KINDS = ("csv", "gaussian", "gmm_json", "swiss_roll")


def _parse_input(d: dict, idx: int, rng: np.random.Generator):
    """Returns (sampler, dataset measure or None, gmm or None)."""
    ctx = f"inputs[{idx}]"
    kind = _get(d, "kind", str, ctx, required=True)
    if kind == "csv":
        _check_keys(d, ["kind", "path", "label_column", "components_per_class"], ctx)
        path = _existing_path(_get(d, "path", str, ctx, required=True), ctx)
        measure = load_csv(path, _get(d, "label_column", str, ctx))
        return EmpiricalSampler(measure, idx), measure, None
    if kind == "gaussian":
        _check_keys(d, ["kind", "mean", "std"], ctx)
        mean = np.asarray(_get(d, "mean", list, ctx, required=True), dtype=float)
        std = d.get("std", 1.0)
        std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape).copy()
        comp = GaussianComponent(mean, np.diag(std))
        return GaussianSampler(mean, std=std, source_index=idx), None, LabeledGMM(
            [1.0], (comp,))
    if kind == "gmm_json":
        _check_keys(d, ["kind", "path"], ctx)
        gmm = load_gmm(_existing_path(_get(d, "path", str, ctx, required=True), ctx))
        return GmmSampler(gmm, idx), None, gmm
    if kind == "swiss_roll":
        _check_keys(d, ["kind", "n", "noise_std", "n_classes", "components_per_class"], ctx)
        measure = swiss_roll(
            _get(d, "n", int, ctx, 1000),
            _get(d, "noise_std", float, ctx, 0.0),
            seed=rng,
            n_classes=_get(d, "n_classes", int, ctx, 4),
        )
        return EmpiricalSampler(measure, idx), measure, None
    raise ConfigError(f"{ctx}: kind must be one of {INPUT_KINDS}")


def _input_to_gmm(d: dict, idx: int, parsed, cfg_gmm_components: int,
                  rng: np.random.Generator) -> LabeledGMM:
    sampler, measure, gmm = parsed
    if gmm is not None:
        return gmm
    ctx = f"inputs[{idx}]"
    per_class = _get(d, "components_per_class", int, ctx, 1)
    if isinstance(measure, LabeledEmpiricalMeasure):
        return em_fit(measure.points, measure.hard_labels(),
                      components_per_class=per_class, seed=rng)
    return em_fit(measure.points, components_per_class=cfg_gmm_components,
                  seed=rng)


# ---------------------------------------------------------------------------
# artifacts

def write_trace_csv(trace, path) -> None:
    """Objective trace as CSV: iter,B_hat,V,U,G,F,param_norm (both flows)."""
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["iter", "B_hat", "V", "U", "G", "F", "param_norm"])
        for r in trace:
            w.writerow([r.iter] + [format(v, ".17g") for v in
                                   (r.b_hat, r.v, r.u, r.g, r.f, r.param_norm)])


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def write_report(out_dir: Path, command: str, config: dict, timings: dict,
                 artifacts: list, summary: dict) -> Path:
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "config": snapshot(config),
        "git_describe": _git_describe(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "baryflow": __version__,
        },
        "timings_ms": timings,
        "artifacts": [str(a) for a in artifacts],
        "summary": snapshot(summary),
    }
    path = out_dir / "run_report.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    return path


def _out_dir(cfg: dict, ctx: str) -> Path:
    out = Path(_get(cfg, "output_dir", str, ctx, required=True))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# barycenter command

BARY_KEYS = ["command", "seed", "output_dir", "flow", "coordinates", "inputs",
             "flow_config", "functional"]
EMP_FLOW_KEYS = ["n_particles", "batch_size", "n_iter", "step_size",
                 "label_weight", "init", "label_init", "solver", "entropic_eps"]
GMM_FLOW_KEYS = ["n_components", "n_iter", "step_size", "label_weight",
                 "mc_samples", "diag_only", "flow_weights", "init_mode",
                 "init_samples"]


def _parse_empirical_flow(d: dict, coords, functional, seed, ctx
                          ) -> EmpiricalFlowConfig:
    _check_keys(d, EMP_FLOW_KEYS, ctx)
    try:
        return EmpiricalFlowConfig(
            n_particles=_get(d, "n_particles", int, ctx, 128),
            batch_size=_get(d, "batch_size", int, ctx, 128),
            n_iter=_get(d, "n_iter", int, ctx, 150),
            coordinates=coords,
            step_size=_get(d, "step_size", float, ctx, 0.5),
            label_weight=_get(d, "label_weight", float, ctx, 0.0),
            functional=functional,
            init=_get(d, "init", str, ctx, "gaussian"),
            label_init=_get(d, "label_init", str, ctx, "uniform"),
            seed=seed,
            solver=_get(d, "solver", str, ctx, "exact"),
            entropic_eps=_get(d, "entropic_eps", float, ctx),
        )
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from None


def _parse_gmm_flow(d: dict, coords, functional, seed, ctx) -> GmmFlowConfig:
    _check_keys(d, GMM_FLOW_KEYS, ctx)
    try:
        return GmmFlowConfig(
            n_components=_get(d, "n_components", int, ctx, 4),
            n_iter=_get(d, "n_iter", int, ctx, 300),
            coordinates=coords,
            step_size=_get(d, "step_size", float, ctx, 0.1),
            label_weight=_get(d, "label_weight", float, ctx, 0.0),
            mc_samples=_get(d, "mc_samples", int, ctx, 128),
            functional=functional,
            diag_only=_get(d, "diag_only", bool, ctx, False),
            flow_weights=_get(d, "flow_weights", bool, ctx, False),
            init_mode=_get(d, "init_mode", str, ctx, "em"),
            init_samples=_get(d, "init_samples", int, ctx, 256),
            seed=seed,
        )
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from None


def _prepare_barycenter(cfg: dict):
    ctx = "barycenter config"
    _check_keys(cfg, BARY_KEYS, ctx)
    flow_kind = _get(cfg, "flow", str, ctx, required=True)
    if flow_kind not in ("empirical", "gmm"):
        raise ConfigError(f"{ctx}: flow must be 'empirical' or 'gmm'")
    seed = _get(cfg, "seed", int, ctx, 0)
    inputs_cfg = _get(cfg, "inputs", list, ctx, required=True)
    if not inputs_cfg:
        raise ConfigError(f"{ctx}: inputs must be a non-empty list")
    coords = _parse_coordinates(cfg, len(inputs_cfg), ctx)
    functional = _parse_functional(cfg.get("functional", {}), f"{ctx}: functional")
    flow_cfg_raw = cfg.get("flow_config", {})
    if not isinstance(flow_cfg_raw, dict):
        raise ConfigError(f"{ctx}: flow_config must be an object")

    rng = np.random.default_rng(seed)
    parsed = [_parse_input(d, i, rng) for i, d in enumerate(inputs_cfg)]
    if flow_kind == "empirical":
        flow_cfg = _parse_empirical_flow(
            flow_cfg_raw, coords, functional, seed, f"{ctx}: flow_config")
        samplers = [p[0] for p in parsed]
        return flow_kind, flow_cfg, samplers
    flow_cfg = _parse_gmm_flow(
        flow_cfg_raw, coords, functional, seed, f"{ctx}: flow_config")
    gmms = [_input_to_gmm(d, i, p, flow_cfg.n_components, rng)
            for i, (d, p) in enumerate(zip(inputs_cfg, parsed))]
    return flow_kind, flow_cfg, gmms


def cmd_barycenter(cfg: dict) -> int:
    flow_kind, flow_cfg, inputs = _prepare_barycenter(cfg)
    out = _out_dir(cfg, "barycenter config")
    timings = {}
    t0 = time.perf_counter()
    if flow_kind == "empirical":
        final, trace = run_flow(inputs, flow_cfg)
        final_path = out / "final_measure.csv"
        save_csv(final, final_path)
    else:
        final, trace = run_gmm_flow(inputs, flow_cfg)
        final_path = out / "final_mixture.json"
        save_gmm(final, final_path)
    timings["flow_ms"] = 1e3 * (time.perf_counter() - t0)
    trace_path = out / "trace.csv"
    write_trace_csv(trace, trace_path)
    summary = {"final_objective": trace[-1].f, "n_iterations": trace[-1].iter}
    report = write_report(out, "barycenter", cfg, timings,
                          [final_path, trace_path], summary)
    print(f"barycenter: wrote {final_path}, {trace_path}, {report}")
    return 0


# ---------------------------------------------------------------------------
# toy command

TOY_KEYS = ["command", "seed", "output_dir", "base", "n_family", "n_samples",
            "noise_std", "solvers", "eval_points", "flow", "gmm"]
TOY_SOLVERS = ("wgf", "wgf_gmm", "fixed_point")


def cmd_toy(cfg: dict) -> int:
    ctx = "toy config"
    _check_keys(cfg, TOY_KEYS, ctx)
    seed = _get(cfg, "seed", int, ctx, 0)
    base = _get(cfg, "base", str, ctx, "gaussian")
    if base not in ("gaussian", "swiss_roll"):
        raise ConfigError(f"{ctx}: base must be 'gaussian' or 'swiss_roll'")
    k = _get(cfg, "n_family", int, ctx, 4)
    n = _get(cfg, "n_samples", int, ctx, 256)
    eval_points = _get(cfg, "eval_points", int, ctx, 500)
    solvers = _get(cfg, "solvers", list, ctx, list(TOY_SOLVERS))
    for s in solvers:
        if s not in TOY_SOLVERS:
            raise ConfigError(f"{ctx}: unknown solver {s!r}")
    flow_over = cfg.get("flow", {})
    gmm_over = cfg.get("gmm", {})
    out = _out_dir(cfg, ctx)

    rng = np.random.default_rng(seed)
    coords = BarycentricCoordinates.uniform(k)
    if base == "gaussian":
        mean0 = np.zeros(2)
        cov0 = np.array([[1.0, 0.3], [0.3, 0.6]])
        chol0 = np.linalg.cholesky(cov0)
        q0 = EmpiricalMeasure(rng.standard_normal((n, 2)) @ chol0.T + mean0)
        # family centered away from the origin so the gaussian-scaled init
        # starts at a substantial distance from the barycenter
        maps = pd_affine_family(k, dim=2, seed=rng, shift_scale=1.5)
        maps = [AffineMap(m.a, m.b + np.array([4.0, 3.0])) for m in maps]
        # the family of a Gaussian base has a computable barycenter
        family_gaussians = [
            GaussianComponent(m.apply(mean0[None])[0],
                              np.linalg.cholesky(m.a @ cov0 @ m.a.T))
            for m in maps
        ]
        oracle = fixed_point_gaussian_barycenter(family_gaussians, coords.lam)
        ref_gmm = LabeledGMM([1.0], (oracle,))
        ref_pts, _, _ = sample_reparam(ref_gmm, n, rng)
        reference = EmpiricalMeasure(ref_pts)
    else:
        q0 = swiss_roll(n, _get(cfg, "noise_std", float, ctx, 0.05), seed=rng)
        maps = default_affine_family(k, seed=rng)
        avg = AffineMapAverage(maps)
        reference = EmpiricalMeasure(avg.apply(q0.points))
    inputs = location_scatter_family(q0, maps)

    emp_cfg = _parse_empirical_flow(
        flow_over, coords, FunctionalSpec(), seed, f"{ctx}: flow")
    gmm_cfg = _parse_gmm_flow(
        gmm_over, coords, FunctionalSpec(), seed, f"{ctx}: gmm")

    rows = []
    timings = {}
    init_measure, _ = run_flow(
        [EmpiricalSampler(m, i) for i, m in enumerate(inputs)],
        _replace_iters(emp_cfg, 0))
    rows.append(("init", w2_to_reference(init_measure, reference,
                                         max_points=eval_points, seed=seed)))
    for solver in solvers:
        t0 = time.perf_counter()
        if solver == "wgf":
            result, _ = run_flow(
                [EmpiricalSampler(m, i) for i, m in enumerate(inputs)], emp_cfg)
        elif solver == "fixed_point":
            result = fixed_point_baseline(inputs, emp_cfg)
        else:
            gmms = [em_fit(m.points, components_per_class=gmm_cfg.n_components,
                           seed=np.random.default_rng(seed + 17 * i))
                    for i, m in enumerate(inputs)]
            mixture, _ = run_gmm_flow(gmms, gmm_cfg)
            pts, _, _ = sample_reparam(mixture, n, np.random.default_rng(seed + 1))
            result = EmpiricalMeasure(pts)
        w2 = w2_to_reference(result, reference, max_points=eval_points, seed=seed)
        timings[f"{solver}_ms"] = 1e3 * (time.perf_counter() - t0)
        rows.append((solver, w2))

    table_path = out / "toy_table.csv"
    with open(table_path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["solver", "w2_to_ref"])
        for name, val in rows:
            w.writerow([name, format(val, ".17g")])
    report = write_report(out, "toy", cfg, timings, [table_path],
                          {"table": {name: val for name, val in rows}})
    print(f"toy: wrote {table_path}, {report}")
    return 0


class AffineMapAverage:
    """Coordinate average of affine maps; the pushforward reference for
    qualitative (non-PD) families."""

    def __init__(self, maps):
        self.a = np.mean([m.a for m in maps], axis=0)
        self.b = np.mean([m.b for m in maps], axis=0)

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.a.T + self.b


def _replace_iters(cfg: EmpiricalFlowConfig, n_iter: int) -> EmpiricalFlowConfig:
    return dataclasses.replace(cfg, n_iter=n_iter)


# ---------------------------------------------------------------------------
# msda command

MSDA_KEYS = ["command", "seed", "output_dir", "task", "sources_csv",
             "target_csv", "label_column", "method", "combos", "flow", "gmm",
             "functional", "target_batch"]
TASK_KEYS = ["n_classes", "dim", "k_sources", "n_samples", "class_sep",
             "class_std", "target_rotation_deg", "source_spread_deg",
             "source_jitter"]
MSDA_COMBOS = ("B", "B+V", "B+U", "B+V+U")


def cmd_msda(cfg: dict) -> int:
    ctx = "msda config"
    _check_keys(cfg, MSDA_KEYS, ctx)
    seed = _get(cfg, "seed", int, ctx, 0)
    method = _get(cfg, "method", str, ctx, "empirical")
    if method not in ("empirical", "gmm", "discrete_baseline"):
        raise ConfigError(f"{ctx}: method must be empirical|gmm|discrete_baseline")
    combos = _get(cfg, "combos", list, ctx, list(MSDA_COMBOS))
    for c in combos:
        if c not in MSDA_COMBOS:
            raise ConfigError(f"{ctx}: unknown combo {c!r}")
    out = _out_dir(cfg, ctx)
    rng = np.random.default_rng(seed)

    if "sources_csv" in cfg or "target_csv" in cfg:
        paths = _get(cfg, "sources_csv", list, ctx, required=True)
        tpath = _get(cfg, "target_csv", str, ctx, required=True)
        label_col = _get(cfg, "label_column", str, ctx, "label")
        sources = [load_csv(_existing_path(p, ctx), label_col) for p in paths]
        target = load_csv(_existing_path(tpath, ctx), label_col)
        if not isinstance(target, LabeledEmpiricalMeasure):
            raise ConfigError(f"{ctx}: target CSV needs the label column "
                              f"{label_col!r} for evaluation")
        target_features = target.base
        eval_labels = target.hard_labels()
    else:
        task = cfg.get("task", {})
        _check_keys(task, TASK_KEYS, f"{ctx}: task")
        specs = synthetic_domain_specs(
            n_classes=_get(task, "n_classes", int, ctx, 3),
            dim=_get(task, "dim", int, ctx, 2),
            k_sources=_get(task, "k_sources", int, ctx, 2),
            n_samples=_get(task, "n_samples", int, ctx, 256),
            class_sep=_get(task, "class_sep", float, ctx, 5.0),
            class_std=_get(task, "class_std", float, ctx, 0.8),
            target_rotation_deg=_get(task, "target_rotation_deg", float, ctx, 35.0),
            source_spread_deg=_get(task, "source_spread_deg", float, ctx, 80.0),
            source_jitter=_get(task, "source_jitter", float, ctx, 0.15),
            seed=rng,
        )
        data = synthetic_msda(specs, seed=rng)
        sources = list(data.sources)
        target_features = data.target_features
        eval_labels = data.target_labels

    coords = BarycentricCoordinates.uniform(len(sources))
    target_batch = _get(cfg, "target_batch", int, ctx, 128)
    idx = rng.choice(target_features.n,
                     size=min(target_batch, target_features.n), replace=False)
    target_sub = EmpiricalMeasure(target_features.points[idx])
    functional = _parse_functional(
        cfg.get("functional", {}), f"{ctx}: functional", target_measure=target_sub)
    if functional.target_weight > 0 and functional.target_measure is None:
        raise ConfigError(f"{ctx}: functional.target_weight needs a target")

    rows = []
    timings = {}
    reports = {}
    for combo in combos:
        spec = functional.with_mask("V" in combo, "U" in combo)
        if method == "gmm":
            run_cfg = _parse_gmm_flow(cfg.get("gmm", {}), coords, spec, seed,
                                      f"{ctx}: gmm")
        else:
            run_cfg = _parse_empirical_flow(cfg.get("flow", {}), coords, spec,
                                            seed, f"{ctx}: flow")
        t0 = time.perf_counter()
        rep = msda_adapt(sources, target_features, eval_labels, method, run_cfg)
        timings[f"{combo}_ms"] = 1e3 * (time.perf_counter() - t0)
        rows.append((combo, rep.accuracy_adapted, rep.accuracy_source_only))
        reports[combo] = {"accuracy_adapted": rep.accuracy_adapted,
                          "accuracy_source_only": rep.accuracy_source_only,
                          "timings_ms": rep.timings_ms}

    table_path = out / "ablation_table.csv"
    with open(table_path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["combo", "accuracy_adapted", "accuracy_source_only"])
        for combo, acc_a, acc_s in rows:
            w.writerow([combo, format(acc_a, ".17g"), format(acc_s, ".17g")])
    report = write_report(out, "msda", cfg, timings, [table_path],
                          {"method": method, "reports": reports})
    print(f"msda: wrote {table_path}, {report}")
    return 0


# ---------------------------------------------------------------------------
# gen command

GEN_KEYS = ["command", "seed", "output_dir", "dataset"]
GEN_KINDS = ("swiss_roll", "location_scatter", "synthetic_msda")


def cmd_gen(cfg: dict) -> int:
    ctx = "gen config"
    _check_keys(cfg, GEN_KEYS, ctx)
    seed = _get(cfg, "seed", int, ctx, 0)
    out = _out_dir(cfg, ctx)
    ds = _get(cfg, "dataset", dict, ctx, required=True)
    kind = _get(ds, "kind", str, f"{ctx}: dataset", required=True)
    rng = np.random.default_rng(seed)
    artifacts = []

    if kind == "swiss_roll":
        _check_keys(ds, ["kind", "n", "noise_std", "n_classes"], ctx)
        m = swiss_roll(_get(ds, "n", int, ctx, 1000),
                       _get(ds, "noise_std", float, ctx, 0.0),
                       seed=rng, n_classes=_get(ds, "n_classes", int, ctx, 4))
        path = out / "swiss_roll.csv"
        save_csv(m, path)
        artifacts.append(path)
    elif kind == "location_scatter":
        _check_keys(ds, ["kind", "n", "k", "noise_std", "family"], ctx)
        k = _get(ds, "k", int, ctx, 4)
        q0 = swiss_roll(_get(ds, "n", int, ctx, 1000),
                        _get(ds, "noise_std", float, ctx, 0.05), seed=rng)
        family = _get(ds, "family", str, ctx, "default")
        if family == "default":
            maps = default_affine_family(k, seed=rng)
        elif family == "pd":
            maps = pd_affine_family(k, dim=2, seed=rng, shift_scale=3.0)
        else:
            raise ConfigError(f"{ctx}: family must be 'default' or 'pd'")
        for i, m in enumerate(location_scatter_family(q0, maps)):
            path = out / f"family_{i}.csv"
            save_csv(m, path)
            artifacts.append(path)
    elif kind == "synthetic_msda":
        _check_keys(ds, ["kind"] + TASK_KEYS, ctx)
        params = {k: v for k, v in ds.items() if k != "kind"}
        specs = synthetic_domain_specs(seed=rng, **params)
        data = synthetic_msda(specs, seed=rng)
        for i, s in enumerate(data.sources):
            path = out / f"source_{i}.csv"
            save_csv(s, path)
            artifacts.append(path)
        tgt = LabeledEmpiricalMeasure.from_hard_labels(
            data.target_features.points, data.target_labels,
            int(data.target_labels.max()) + 1)
        path = out / "target.csv"
        save_csv(tgt, path)
        artifacts.append(path)
    else:
        raise ConfigError(f"{ctx}: dataset kind must be one of {GEN_KINDS}")

    report = write_report(out, "gen", cfg, {}, artifacts, {"kind": kind})
    print(f"gen: wrote {len(artifacts)} file(s), {report}")
    return 0


# ---------------------------------------------------------------------------

COMMANDS = {
    "barycenter": cmd_barycenter,
    "toy": cmd_toy,
    "msda": cmd_msda,
    "gen": cmd_gen,
}


def validate_config(cfg: dict) -> str:
    command = _get(cfg, "command", str, "config", required=True)
    if command not in COMMANDS:
        raise ConfigError(f"config: command must be one of {sorted(COMMANDS)}")
    # dry-run the command-specific parsing without touching the output dir
    probe = dict(cfg)
    if command == "barycenter":
        _prepare_barycenter(probe)
    elif command == "toy":
        _check_keys(probe, TOY_KEYS, "toy config")
    elif command == "msda":
        _check_keys(probe, MSDA_KEYS, "msda config")
        if "sources_csv" in probe or "target_csv" in probe:
            for p in _get(probe, "sources_csv", list, "msda config", required=True):
                _existing_path(p, "msda config")
            _existing_path(
                _get(probe, "target_csv", str, "msda config", required=True),
                "msda config")
    else:
        _check_keys(probe, GEN_KEYS, "gen config")
    return command


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="baryflow",
        description="Wasserstein barycenters by gradient flow")
    parser.add_argument("subcommand",
                        choices=sorted(COMMANDS) + ["validate"])
    parser.add_argument("config", help="path to a JSON run config")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap solver parallelism (default: "
                             "BARYFLOW_THREADS or 1)")
    args = parser.parse_args(argv)

    if args.threads is not None:
        ot.set_num_threads(args.threads)
    elif os.environ.get("BARYFLOW_THREADS"):
        ot.set_num_threads(int(os.environ["BARYFLOW_THREADS"]))

    try:
        cfg = load_config(args.config)
        command = validate_config(cfg)
        if args.subcommand == "validate":
            print(f"config ok: command={command}")
            return 0
        if command != args.subcommand:
            raise ConfigError(
                f"config declares command {command!r}; invoked as "
                f"{args.subcommand!r}")
        return COMMANDS[command](cfg)
    except ConfigError as e:
        print(f"baryflow-error[config]: {e}", file=sys.stderr)
        return 1
    except (ot.ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"baryflow-error[numeric]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
