"""Experiment families behind the command line: kernel, spectrum, converge, train, ratio.

Each runner takes a validated :class:`ExperimentConfig`, writes CSVs into an
output directory and returns a :class:`RunResult`. Sweep entries are
independent jobs. With ``jobs > 1`` they run in worker processes, but files
are written by the parent in a fixed order, so output bytes never depend on
scheduling.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .config import ExperimentConfig, _operator
from .dynamics import (
    Recorder,
    TrainingProblem,
    adam_train,
    compare_dynamics,
    gradient_descent,
)
from .kernel import KernelSpec, operator_gram
from .network import NetworkConfig, empirical_gram, init_params
from .rng import uniform_samples
from .spectral import (
    GramSpectrum,
    NystromProblem,
    decay_index,
    normalize_spectra,
    ratio_bound_check,
    svg_line_chart,
)

DECAY_THRESHOLD = 1e-6


@dataclass
class RunResult:
    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: str | None = None


def fmt(v) -> str:
    """17 significant digits, '.' decimal."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def _label(spec, i: int) -> str:
    return spec if isinstance(spec, str) else f"op{i}"


def _slug(s) -> str:
    return str(s).replace("+", "plus").replace("^", "").replace(".", "p").replace("-", "m")


def _map(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def unit_grid(count: int, dim: int) -> np.ndarray:
    """Cell midpoints of a uniform grid on [0, 1]^dim.

    Midpoints keep every point off the origin, where a bias-free network is
    identically zero and the kernel degenerates.
    """
    t = (np.arange(count) + 0.5) / count
    mesh = np.meshgrid(*([t] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _widths(cfg: ExperimentConfig, hidden: int | None = None) -> tuple[int, ...]:
    w = cfg["network"]["widths"]
    if hidden is not None:
        depth = cfg["kernel"]["depth"]
        return (cfg["dim"],) + (hidden,) * depth + (1,)
    if w is None:
        return (cfg["dim"], 1024, 1)
    return tuple(w)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


def run_kernel(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    kg = cfg["kernel_grid"]
    dim = cfg["dim"]
    op = _operator(kg["operator"], dim)
    k = cfg["kernel"]
    spec = KernelSpec(k["depth"], k["activation"], k["order"] if k["order"] is not None else op.order, k["nodes"])
    pts = unit_grid(kg["grid"], 1) if dim == 1 else uniform_samples(cfg["seed"], cfg["n"], dim)
    G = operator_gram(op, spec, pts)
    rows = []
    for i in range(len(pts)):
        for j in range(len(pts)):
            rows.append([*pts[i], *pts[j], G[i, j]])
    header = [f"x{c}" for c in range(dim)] + [f"xp{c}" for c in range(dim)] + ["value"]
    f = write_csv(out / "kernel.csv", header, rows)
    return RunResult([f], {"points": len(pts), "max_abs": float(np.max(np.abs(G)))})


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------


def _spectrum_job(task):
    widths, act, use_bias, param, seed, n, dim, op_spec = task
    net = NetworkConfig(widths, act, use_bias, seed, param)
    params = init_params(net)
    X = uniform_samples(seed, n, dim)
    G = empirical_gram(params, _operator(op_spec, dim), X)
    return GramSpectrum(G).eigenvalues


def run_spectrum(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    net = cfg["network"]
    acts = cfg.get("activations") or [net["activation"]]
    ops = cfg["operators"]
    labels = [_label(s, i) for i, s in enumerate(ops)]
    threshold = cfg.get("threshold", DECAY_THRESHOLD)
    tasks = [
        (_widths(cfg), act, net["use_bias"], net["parameterization"], cfg["seed"], cfg["n"], cfg["dim"], spec)
        for act in acts
        for spec in ops
    ]
    eigs = _map(_spectrum_job, tasks, jobs)
    res = RunResult()
    combined = []
    decay: dict[str, dict[str, int]] = {}
    for a_i, act in enumerate(acts):
        block = eigs[a_i * len(ops):(a_i + 1) * len(ops)]
        normed = normalize_spectra(block)
        decay[act] = {}
        for lab, lam, nl in zip(labels, block, normed):
            rows = [[j + 1, lam[j], nl[j], lab] for j in range(len(lam))]
            name = f"spectrum_{_slug(act)}_{_slug(lab)}.csv"
            res.files.append(write_csv(out / name, ["index", "eigenvalue", "normalized", "operator"], rows))
            combined.extend([act, lab, j + 1, nl[j]] for j in range(len(nl)))
            decay[act][lab] = decay_index(nl, threshold)
        if cfg["svg"]:
            svg = svg_line_chart(dict(zip(labels, normed)), f"normalized spectrum, {act}")
            p = out / f"spectrum_{_slug(act)}.svg"
            p.write_text(svg)
            res.files.append(p)
    res.files.append(
        write_csv(out / "spectrum_normalized.csv", ["activation", "operator", "index", "normalized"], combined)
    )
    res.summary = {"threshold": threshold, "decay_index": decay}
    return res


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------


def _converge_job(task):
    widths, act, seed, dim, op_spec, pts = task
    params = init_params(NetworkConfig(widths, act, False, seed, "ntk"))
    return empirical_gram(params, _operator(op_spec, dim), pts)


def run_converge(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    cv = cfg["converge"]
    k = cfg["kernel"]
    dim = cfg["dim"]
    pts = unit_grid(cv["grid"], 1) if dim == 1 else uniform_samples(cfg["seed"], cv["grid"], dim)
    rows, summary_rows = [], []
    summary: dict[str, Any] = {}
    for i, op_spec in enumerate(cfg["operators"]):
        lab = _label(op_spec, i)
        op = _operator(op_spec, dim)
        spec = KernelSpec(k["depth"], k["activation"], op.order, k["nodes"])
        exact = operator_gram(op, spec, pts)
        scale = float(np.max(np.abs(exact)))
        tasks = [(_widths(cfg, m), k["activation"], s, dim, op_spec, pts) for m in cv["widths"] for s in cv["seeds"]]
        grams = _map(_converge_job, tasks, jobs)
        means = []
        for w_i, m in enumerate(cv["widths"]):
            errs = []
            for s_i, s in enumerate(cv["seeds"]):
                G = grams[w_i * len(cv["seeds"]) + s_i]
                e = float(np.max(np.abs(G - exact)))
                errs.append(e)
                rows.append([lab, m, s, e, e / scale])
            means.append(float(np.mean(errs)))
            summary_rows.append([lab, m, means[-1], means[-1] / scale])
        summary[lab] = {
            "analytic_max": scale,
            "mean_sup_error": means,
            "monotone": bool(all(b <= a for a, b in zip(means, means[1:]))),
            "final_relative": means[-1] / scale,
        }
    header = ["operator", "width", "seed", "sup_error", "relative_error"]
    f1 = write_csv(out / "converge.csv", header, rows)
    f2 = write_csv(out / "converge_summary.csv", ["operator", "width", "mean_sup_error", "relative_error"], summary_rows)
    return RunResult([f1, f2], summary)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_job(task):
    t, net, widths, n, dim, a, seed = task
    X = uniform_samples(seed, n, dim)
    problem = TrainingProblem(X, variant=t["variant"], w=t["w"], a=a, normalization=t["normalization"])
    cps = t["checkpoints"]
    if t["mode"] == "compare":
        config = NetworkConfig(widths, net["activation"], False, seed, "ntk")
        grid = unit_grid(t["grid"], 1) if dim == 1 else uniform_samples(seed + 1, t["grid"], dim)
        cmp = compare_dynamics(problem, config, t["lr"], t["steps"], grid, checkpoints=cps)
        rows = [[s, tm, l, d] for s, tm, l, d in zip(cmp.steps, cmp.times, cmp.losses, cmp.deviation)]
        info = {"max_deviation": cmp.max_deviation, "mean_deviation": cmp.mean_deviation,
                "max_abs_target": float(np.max(np.abs(problem.targets))), "lambda_min": cmp.lambda_min}
        return rows, info
    config = NetworkConfig(widths, net["activation"], net["use_bias"], seed, net["parameterization"])
    params = init_params(config)
    rec = Recorder(checkpoints=cps)
    if t["mode"] == "adam":
        traj = adam_train(problem, params, t["lr"], t["steps"], tuple(t["betas"]), t["eps"], rec)
    else:
        traj = gradient_descent(problem, params, t["lr"], t["steps"], rec)
    rows = [[r["step"], r["time"], r["loss"], math.nan] for r in traj.records]
    info = {"final_loss": float(traj.losses[-1])}
    if t["mode"] == "adam":
        info["final_raw_loss"] = float(traj.records[-1]["raw_loss"])
    return rows, info


def run_train(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    t = cfg["train"]
    net = cfg["network"]
    widths = _widths(cfg)
    tasks = [(t, net, widths, cfg["n"], cfg["dim"], float(a), s) for a in t["a"] for s in t["seeds"]]
    results = _map(_train_job, tasks, jobs)
    res = RunResult()
    runs = {}
    for (_, _, _, _, _, a, s), (rows, info) in zip(tasks, results):
        name = f"train_{t['mode']}_{t['variant']}_a{_slug(fmt(a))}_seed{s}.csv"
        res.files.append(write_csv(out / name, ["step", "time", "loss", "sup_deviation"], rows))
        runs[name] = {"a": a, "seed": s, **info}
        meta = {"config_digest": cfg.digest(), "seed": s, "a": a, "variant": t["variant"],
                "mode": t["mode"], "normalization": t["normalization"], **info}
        sidecar = out / name.replace(".csv", ".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        res.files.append(sidecar)
    res.summary = {"mode": t["mode"], "variant": t["variant"], "runs": runs}
    return res


# ---------------------------------------------------------------------------
# ratio
# ---------------------------------------------------------------------------


def run_ratio(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    r = cfg["ratio"]
    k = cfg["kernel"]
    op = _operator(r["operator"], 1)
    c_t = r["c_t"] if r["c_t"] is not None else 1.0 / math.pi**2
    base = KernelSpec(k["depth"], k["activation"], 0, k["nodes"])
    lifted = KernelSpec(k["depth"], k["activation"], op.order, k["nodes"])
    ident = _operator("id", 1)
    lam = NystromProblem.midpoint(lambda X, Y: operator_gram(ident, base, X), r["grid"])
    mu = NystromProblem.midpoint(lambda X, Y: operator_gram(op, lifted, X), r["grid"])
    lam_e = GramSpectrum(lam.matrix()).eigenvalues
    mu_e = GramSpectrum(mu.matrix()).eigenvalues
    J = r["count"]
    bound = c_t**2 * (1.0 + r["slack"])
    rows = []
    for j in range(J):
        ratio = lam_e[j] / mu_e[j] if mu_e[j] > 0 else math.nan
        rows.append([j + 1, lam_e[j], mu_e[j], ratio, int(bool(ratio <= bound))])
    res = RunResult([write_csv(out / "ratio.csv", ["index", "lambda", "mu", "ratio", "within_bound"], rows)])
    res.summary = {"c_t": c_t, "slack": r["slack"], "bound": bound, "count": J}
    check = ratio_bound_check(lam_e, mu_e, c_t, r["slack"], J)  # raises on mu_j <= 0
    res.summary.update({"passed": check.passed, "max_ratio": check.max_ratio})
    return res


RUNNERS = {
    "kernel": run_kernel,
    "spectrum": run_spectrum,
    "converge": run_converge,
    "train": run_train,
    "ratio": run_ratio,
}


def versions() -> dict[str, str]:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    try:
        out["pinntk"] = metadata.version("pinntk")
    except metadata.PackageNotFoundError:
        out["pinntk"] = "unknown"
    return out


def write_manifest(cfg: ExperimentConfig, out: Path, result: RunResult, wall: float, status: str) -> Path:
    manifest = {
        "command": cfg.command,
        "status": status,
        "seed": cfg["seed"],
        "config": cfg.raw,
        "config_digest": cfg.digest(),
        "versions": versions(),
        "wall_time_s": wall,
        "files": sorted(p.name for p in result.files),
        "summary": result.summary,
    }
    if result.error:
        manifest["error"] = result.error
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def run(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    """Run one command; the manifest is written last, even after a numerical failure."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = RunResult()
    try:
        result = RUNNERS[cfg.command](cfg, out, jobs)
    except Exception as exc:
        if isinstance(exc, OSError):
            raise
        # keep whatever files the runner listed before failing
        result.error = f"{type(exc).__name__}: {exc}"
        for p in sorted(out.glob("*.csv")):
            if p not in result.files:
                result.files.append(p)
        write_manifest(cfg, out, result, time.perf_counter() - t0, "failed")
        raise
    write_manifest(cfg, out, result, time.perf_counter() - t0, "ok")
    return result
