"""Benchmark sweeps: random instances x methods, oracle metrics, CSV output."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field, replace
import io
import itertools
import time
import warnings

import numpy as np

from .classic import InferenceResult, loopy_bp, mean_field
from .errors import ContractViolation
from .exact import ExactResult, exact_inference
from .gbp import gbp_run
from .model import as_factor_graph, parse_topology, random_ising, topology_str
from .regiongraph import bethe_region_graph, build_region_graph
from .renn import RennConfig, renn_infer, select_lambda

__all__ = ["Metrics", "compute_metrics", "SweepConfig", "parse_sweep_config", "run_method",
           "run_benchmark", "write_csv", "CSV_COLUMNS", "METHODS", "ALL_METHODS"]

CSV_COLUMNS = ["method", "topology", "n", "gamma", "seed", "l1_error", "pearson_rho",
               "logz_error", "free_energy", "runtime_ms", "converged", "status"]
METHODS = ("mf", "lbp", "dbp", "gbp", "renn", "renn-bethe", "exact")
ALL_METHODS = ("mf", "lbp", "dbp", "gbp", "renn", "renn-bethe")


@dataclass
class Metrics:
    l1_error: float
    pearson_rho: float
    logz_error: float
    runtime_ms: float = 0.0
    converged: bool = True
    degenerate: bool = False        # Pearson undefined (zero variance); reported as 0


def _marginal_vector(source, scopes):
    parts = []
    for s in scopes:
        try:
            parts.append(np.asarray(source.marginal(s), dtype=np.float64).reshape(-1))
        except KeyError:
            raise ContractViolation(f"estimate does not cover marginal {s}") from None
    return np.concatenate(parts)


def compute_metrics(estimated, oracle: ExactResult, estimated_F: float,
                    runtime_ms: float = 0.0, converged: bool = True) -> Metrics:
    """Compare every univariate and edge marginal against the oracle.

    Entries are concatenated in one fixed order for both sides; ``l1_error`` is
    the mean absolute difference and ``pearson_rho`` the correlation of the two
    vectors. ``logz_error = |-F - log Z|``.
    """
    n = oracle.unary.shape[0]
    scopes = [(i,) for i in range(n)] + [s for s in oracle.scopes if len(s) == 2]
    p = _marginal_vector(oracle, scopes)
    q = _marginal_vector(estimated, scopes)
    if p.shape != q.shape:
        raise ContractViolation("estimated marginals have the wrong sizes")
    l1 = float(np.mean(np.abs(p - q)))
    if np.std(p) == 0 or np.std(q) == 0:
        rho, degenerate = 0.0, True
    else:
        rho, degenerate = float(np.clip(np.corrcoef(p, q)[0, 1], -1.0, 1.0)), False
    return Metrics(l1, rho, abs(-estimated_F - oracle.log_Z), runtime_ms, bool(converged),
                   degenerate)


# ---- sweep config ----------------------------------------------------------------

@dataclass
class SweepConfig:
    topologies: list[tuple] = field(default_factory=lambda: [("grid", 5, 5)])
    gammas: list[float] = field(default_factory=lambda: [0.1, 1.0])
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    damping: float = 0.5            # dbp
    gbp_damping: float = 0.2
    lam: float | str = 5.0          # number or "auto"
    lr: float = 1e-3
    max_epochs: int = 5000
    max_iters: int = 1000
    tol: float | None = None
    infinite_face: bool = False
    aggregate: bool = True
    jobs: int = 1


def _split(value):
    return [t for t in value.replace(",", " ").split() if t]


def _parse_seeds(value):
    out = []
    for tok in _split(value):
        if ".." in tok:
            a, b = tok.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return out


def _parse_bool(value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_sweep_config(text: str) -> SweepConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Topologies are whitespace-separated (``grid:5,5 complete:9``); other lists
    accept commas or spaces; seeds accept ranges like ``0..19``; ``methods =
    all`` expands to every approximate method.
    """
    cfg = SweepConfig()
    scalars = {"damping": float, "gbp_damping": float, "lr": float, "max_epochs": int,
               "max_iters": int, "tol": float, "jobs": int,
               "infinite_face": _parse_bool, "aggregate": _parse_bool}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep or not value:
            raise ContractViolation(f"line {lineno}: expected 'key = value'")
        try:
            if key in ("topologies", "topology"):
                cfg.topologies = [parse_topology(t) for t in value.split()]
            elif key in ("gammas", "gamma"):
                cfg.gammas = [float(t) for t in _split(value)]
            elif key in ("seeds", "seed"):
                cfg.seeds = _parse_seeds(value)
            elif key in ("methods", "method"):
                ms = _split(value)
                cfg.methods = list(ALL_METHODS) if ms == ["all"] else ms
                bad = [m for m in cfg.methods if m not in METHODS]
                if bad:
                    raise ValueError(f"unknown method(s) {bad}")
            elif key in ("lambda", "lam"):
                cfg.lam = "auto" if value.lower() == "auto" else float(value)
            elif key in scalars:
                setattr(cfg, key, scalars[key](value))
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, ContractViolation) as exc:
            raise ContractViolation(f"line {lineno}: {exc}") from None
    return cfg


# ---- runs --------------------------------------------------------------------------

def _exact_as_result(ex: ExactResult, seconds: float) -> InferenceResult:
    return InferenceResult(ex.unary, ex.factor_marginals, ex.scopes, -ex.log_Z, 0, True,
                           seconds, "exact")


def run_method(model, method: str, *, damping: float | None = None, lam=5.0,
               lr: float = 1e-3, max_iters: int = 1000, max_epochs: int = 5000,
               tol: float | None = None, infinite_face: bool = False, seed: int = 0,
               region_graph=None) -> InferenceResult:
    """Run one named method on a model with the shared defaults."""
    t0 = time.perf_counter()
    if method == "exact":
        return _exact_as_result(exact_inference(model), time.perf_counter() - t0)
    if method == "mf":
        return mean_field(model, max_iters=max_iters, tol=tol if tol is not None else 1e-8)
    if method in ("lbp", "dbp"):
        d = damping if damping is not None else (0.5 if method == "dbp" else 0.0)
        res = loopy_bp(model, max_iters=max_iters, tol=tol if tol is not None else 1e-8,
                       damping=d)
        res.method = method
        return res
    if method == "gbp":
        rg = region_graph or build_region_graph(model, include_infinite_face=infinite_face)
        return gbp_run(rg, model, max_iters=max_iters, tol=tol if tol is not None else 1e-8,
                       damping=damping if damping is not None else 0.2)
    if method in ("renn", "renn-bethe"):
        if method == "renn-bethe":
            rg = bethe_region_graph(model)
        else:
            rg = region_graph or build_region_graph(model, include_infinite_face=infinite_face)
        cfg = RennConfig(lam=5.0 if lam == "auto" else float(lam), lr=lr,
                         max_epochs=max_epochs, seed=seed)
        if tol is not None:
            cfg = replace(cfg, tol=tol)
        if lam == "auto":
            return select_lambda(model, rg, cfg, method=method)
        return renn_infer(model, rg, cfg, method=method)
    raise ContractViolation(f"unknown method {method!r}")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def _run_cell(args):
    cfg, topo, gamma, seed = args
    model = random_ising(topo, gamma, seed)
    rows = []
    try:
        oracle = exact_inference(model)
    except Exception as exc:        # noqa: BLE001 - recorded as a row, sweep continues
        oracle = None
        oracle_err = f"error: oracle {type(exc).__name__}: {exc}"
    rg = None
    for method in cfg.methods:
        base = {"method": method, "topology": topology_str(topo), "n": model.n,
                "gamma": gamma, "seed": seed}
        try:
            if method == "gbp" or method == "renn":
                if rg is None:
                    rg = build_region_graph(model, include_infinite_face=cfg.infinite_face)
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = run_method(model, method,
                                 damping=cfg.gbp_damping if method == "gbp" else
                                 (cfg.damping if method == "dbp" else None),
                                 lam=cfg.lam, lr=cfg.lr, max_iters=cfg.max_iters,
                                 max_epochs=cfg.max_epochs, tol=cfg.tol,
                                 infinite_face=cfg.infinite_face, seed=seed, region_graph=rg)
            ms = 1000.0 * (time.perf_counter() - t0)
            if oracle is None:
                rows.append({**base, "l1_error": "", "pearson_rho": "", "logz_error": "",
                             "free_energy": res.free_energy, "runtime_ms": ms,
                             "converged": int(res.converged), "status": oracle_err})
                continue
            m = compute_metrics(res, oracle, res.free_energy, ms, res.converged)
            rows.append({**base, "l1_error": m.l1_error, "pearson_rho": m.pearson_rho,
                         "logz_error": m.logz_error, "free_energy": res.free_energy,
                         "runtime_ms": ms, "converged": int(m.converged),
                         "status": "degenerate" if m.degenerate else "ok"})
        except Exception as exc:    # noqa: BLE001 - per-run failure becomes an error row
            rows.append({**base, "l1_error": "", "pearson_rho": "", "logz_error": "",
                         "free_energy": "", "runtime_ms": "", "converged": 0,
                         "status": f"error: {type(exc).__name__}: {exc}".replace("\n", " ")})
    return rows


def _aggregate(rows, cfg):
    out = []
    keys = ["l1_error", "pearson_rho", "logz_error", "free_energy", "runtime_ms", "converged"]
    for topo, gamma, method in itertools.product(cfg.topologies, cfg.gammas, cfg.methods):
        t = topology_str(topo)
        cell = [r for r in rows if r["topology"] == t and r["gamma"] == gamma
                and r["method"] == method and not str(r["status"]).startswith("error")]
        if not cell:
            continue
        vals = {k: np.array([float(r[k]) for r in cell if r[k] != ""]) for k in keys}
        for label, fn in (("mean", np.mean), ("std", np.std)):
            row = {"method": method, "topology": t, "n": cell[0]["n"], "gamma": gamma,
                   "seed": label, "status": "aggregate"}
            for k in keys:
                row[k] = float(fn(vals[k])) if vals[k].size else ""
            out.append(row)
    return out


def run_benchmark(cfg: SweepConfig) -> list[dict]:
    """All result rows in (topology, gamma, seed, method) order, then aggregates.

    Each (topology, gamma, seed) cell draws its model once and every method
    runs on that same instance. Aggregates use the population standard deviation.
    """
    cells = [(cfg, topo, float(g), int(s))
             for topo, g, s in itertools.product(cfg.topologies, cfg.gammas, cfg.seeds)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_run_cell, cells))
    else:
        chunks = [_run_cell(c) for c in cells]
    rows = [r for chunk in chunks for r in chunk]
    if cfg.aggregate:
        rows += _aggregate(rows, cfg)
    return rows


def write_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
