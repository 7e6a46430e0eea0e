"""Command-line entry point: gen, infer, bench, learn, sample."""
from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from .errors import (CapacityError, ContractViolation, ModelDomainError, ModelParseError,
                     NumericFault, QueryError)
from .exact import exact_sample, gibbs_sample
from .harness import METHODS, parse_sweep_config, run_benchmark, run_method, write_csv
from .learn import BACKENDS, LearnConfig, learn_mrf
from .model import (PairwiseMRF, parse_topology, random_ising, read_dataset, read_model,
                    write_dataset, write_model)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="renn", description="Region-based inference and learning "
                                "for pairwise Markov random fields.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="draw a random Ising model")
    g.add_argument("--topology", required=True, help="grid:R,C or complete:N")
    g.add_argument("--gamma", type=float, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)

    i = sub.add_parser("infer", help="run one inference method on a model file")
    i.add_argument("--model", required=True)
    i.add_argument("--method", required=True, choices=METHODS)
    i.add_argument("--damping", type=float)
    i.add_argument("--lambda", dest="lam", default="5",
                   help="consistency weight, or 'auto' to pick from 1,3,5,10")
    i.add_argument("--lr", type=float, default=1e-3)
    i.add_argument("--max-iters", type=int, default=None,
                   help="iterations for message passing, epochs for renn")
    i.add_argument("--tol", type=float)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--infinite-face", action="store_true")
    i.add_argument("--json", action="store_true")

    b = sub.add_parser("bench", help="run a benchmark sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)

    le = sub.add_parser("learn", help="fit model parameters to data")
    le.add_argument("--structure", required=True)
    le.add_argument("--train", required=True)
    le.add_argument("--test", required=True)
    le.add_argument("--backend", required=True, choices=BACKENDS)
    le.add_argument("--epochs", type=int, required=True)
    le.add_argument("--out", required=True)
    le.add_argument("--lr", type=float, default=0.02)
    le.add_argument("--inner-steps", type=int, default=20)
    le.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sample", help="draw a dataset from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--gibbs", action="store_true", help="Gibbs chain instead of exact draws")
    return p


def _cmd_gen(a):
    model = random_ising(parse_topology(a.topology), a.gamma, a.seed)
    write_model(model, a.out)
    print(f"wrote {a.out}: n={model.n} edges={len(model.edges)}")


def _infer_payload(res, method):
    pairs = [{"scope": list(s), "table": np.asarray(t).reshape(-1).tolist()}
             for s, t in zip(res.scopes, res.factor_marginals) if len(s) == 2]
    return {"method": method, "free_energy": res.free_energy, "log_z": -res.free_energy,
            "converged": bool(res.converged), "iterations": int(res.iterations),
            "unary": res.unary.tolist(), "pairwise": pairs}


def _cmd_infer(a):
    model = read_model(a.model)
    lam = a.lam if a.lam == "auto" else float(a.lam)
    kw = {}
    if a.max_iters is not None:
        kw["max_epochs" if a.method.startswith("renn") else "max_iters"] = a.max_iters
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_method(model, a.method, damping=a.damping, lam=lam, lr=a.lr, tol=a.tol,
                         infinite_face=a.infinite_face, seed=a.seed, **kw)
    payload = _infer_payload(res, a.method)
    if a.json:
        print(json.dumps(payload, sort_keys=True))
        return
    print(f"method {a.method}")
    print(f"free_energy {payload['free_energy']!r}")
    print(f"log_z {payload['log_z']!r}")
    print(f"converged {int(payload['converged'])} iterations {payload['iterations']}")
    for v, row in enumerate(res.unary):
        print(f"marginal {v} " + " ".join(repr(float(x)) for x in row))
    for p in payload["pairwise"]:
        print("pairwise " + " ".join(map(str, p["scope"])) + " "
              + " ".join(repr(float(x)) for x in p["table"]))


def _cmd_bench(a):
    with open(a.config, encoding="utf-8") as fh:
        cfg = parse_sweep_config(fh.read())
    rows = run_benchmark(cfg)
    write_csv(rows, a.out)
    n_err = sum(str(r["status"]).startswith("error") for r in rows)
    print(f"wrote {a.out}: {len(rows)} rows ({n_err} errors)")


def _cmd_learn(a):
    structure = read_model(a.structure)
    if not isinstance(structure, PairwiseMRF):
        raise ContractViolation("learning needs a native-format pairwise structure")
    train, test = read_dataset(a.train), read_dataset(a.test)
    cfg = LearnConfig(lr=a.lr, inner_steps=a.inner_steps, epochs=a.epochs,
                      backend=a.backend, seed=a.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = learn_mrf(structure, train, test, cfg)
    res.save(a.out)
    last = res.trace[-1]
    print(f"wrote {a.out}: epochs={a.epochs} test_nll={last['test_nll']!r}")


def _cmd_sample(a):
    model = read_model(a.model)
    if a.gibbs:
        X = gibbs_sample(model, a.count, seed=a.seed)
    else:
        X = exact_sample(model, a.count, a.seed)
    write_dataset(X, a.out)
    print(f"wrote {a.out}: {a.count} samples")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"gen": _cmd_gen, "infer": _cmd_infer, "bench": _cmd_bench,
               "learn": _cmd_learn, "sample": _cmd_sample}[args.command]
    try:
        handler(args)
    except (ContractViolation, ModelParseError, ModelDomainError, QueryError, CapacityError,
            NumericFault, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
