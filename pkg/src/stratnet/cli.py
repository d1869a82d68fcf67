"""Command-line front end.

    stratnet <command> [--config FILE] [--n N] [--seed S] [--out DIR] ...

The config is a JSON file with a ``model`` section (see ``spec_from_dict``)
and an optional ``run`` section holding command defaults.  Flags override
``run`` entries; ``--set section.key=JSON`` overrides anything else.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed
``--check``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__, rng
from ._parallel import pmap
from .errors import ConfigError, ContractViolation, StratnetError
from .model import ModelSpec, SparsityScale, spec_from_dict, spec_to_dict

COMMANDS = ("simulate", "moments", "stabilize", "branching", "clt", "infer", "sparsity", "vardecomp")

RUN_DEFAULTS = {
    "n": 100,
    "seed": 0,
    "reps": 500,
    "K": 1,
    "stat": ["degree"],
    "poissonized": False,
    "intensity": "D",
    "networks": 20,
    "mu0": None,
    "draws": 9999,
    "n_grid": [250, 1000, 4000],
    "nodes": None,
    "method": "auto",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stratnet", description="Strategic network formation toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config with 'model' and optional 'run' sections")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="stratnet_out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--K", type=int)
    p.add_argument("--stat", action="append", help="statistic, e.g. degree or triangle:t=1 (repeatable)")
    p.add_argument("--reps", type=int)
    p.add_argument("--check", action="store_true", help="exit 3 if the command's check fails")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override, e.g. model.kappa=2 or run.n_grid=[100,200]")
    return p


# ---------------------------------------------------------------------------
# config resolution


def _apply_set(cfg: dict, item: str):
    key, sep, val = item.partition("=")
    if not sep or "." not in key:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    try:
        value = json.loads(val)
    except json.JSONDecodeError:
        value = val
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}")
    node[parts[-1]] = value


def load_config(path: str | None, args) -> tuple[ModelSpec, dict, dict]:
    """(spec, run parameters, fully resolved config dict)."""
    if path is None:
        raw = {"model": spec_to_dict(ModelSpec())}
    else:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - {"model", "run"}
    if extra:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(extra))}")
    if "model" not in raw:
        raise ConfigError("missing required key: model")
    cfg = copy.deepcopy(raw)
    for item in args.set:
        _apply_set(cfg, item)
    run = dict(RUN_DEFAULTS)
    unknown = set(cfg.get("run", {})) - set(RUN_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown key(s) in run: {', '.join(sorted(unknown))}")
    run.update(cfg.get("run", {}))
    for flag in ("n", "seed", "K", "reps"):
        v = getattr(args, flag)
        if v is not None:
            run[flag] = v
    if args.stat:
        run["stat"] = list(args.stat)
    if isinstance(run["stat"], str):
        run["stat"] = [run["stat"]]
    from .moments import StatSpec

    for s in run["stat"]:
        try:
            StatSpec.parse(s)
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from exc
    spec = spec_from_dict(cfg["model"])
    resolved = {"command": args.command, "model": spec_to_dict(spec), "run": run}
    return spec, run, resolved


def config_hash(resolved: dict) -> str:
    text = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# artifacts


class Artifacts:
    def __init__(self, out_dir: str):
        self.dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"output directory {out_dir!r} is not writable")
        self.files = {}
        self.summary = {}

    def write(self, name: str, text: str):
        with open(os.path.join(self.dir, name), "w", newline="") as fh:
            fh.write(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def table(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.write(name, buf.getvalue())

    def finish(self, resolved: dict, seed: int):
        lines = [f"{k} = {_fmt(v)}" for k, v in self.summary.items()]
        self.write("summary.txt", "\n".join(lines) + "\n")
        man = [
            f"command = {resolved['command']}",
            f"config_sha256 = {config_hash(resolved)}",
            f"seed = {seed}",
            f"stratnet = {__version__}",
            f"numpy = {np.__version__}",
            f"scipy = {scipy.__version__}",
            f"python = {platform.python_version()}",
        ]
        man += [f"artifact.{k} = sha256:{v}" for k, v in sorted(self.files.items())]
        with open(os.path.join(self.dir, "manifest.txt"), "w") as fh:
            fh.write("\n".join(man) + "\n")
        with open(os.path.join(self.dir, "config.json"), "w") as fh:
            json.dump(resolved, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


# ---------------------------------------------------------------------------
# commands; each returns True when its check passes


def _simulate(spec, run):
    from .formation import simulate

    return simulate(spec, run["n"], poissonized=bool(run["poissonized"]), seed=run["seed"])


def cmd_simulate(spec, run, art, threads):
    from .formation import stability_violations

    prims, series = _simulate(spec, run)
    art.write("edges.csv", series.to_csv())
    rows = []
    for a, i in enumerate(prims.node_ids.tolist()):
        rows.append([i, *prims.X[a].tolist(), *prims.Z[a].ravel().tolist()])
    zcols = [f"z_{t}_{k}" for t in range(spec.T + 1) for k in range(spec.d_z)]
    art.table("nodes.csv", ["id", *[f"x_{k}" for k in range(spec.d)], *zcols], rows)
    art.summary.update({"nodes": series.n, **{f"edges_{t}": net.n_edges for t, net in enumerate(series.nets)}})
    if spec.dyadic_initial or series.n == 0:
        return True
    scale = SparsityScale.from_spec(spec, run["n"])
    viol = stability_violations(spec, prims, scale, series[0])
    art.summary["stability_violations"] = viol
    return viol == 0


def cmd_moments(spec, run, art, threads):
    from .moments import StatSpec, compute_stat

    prims, series = _simulate(spec, run)
    cols, header = [], ["id"]
    for s in run["stat"]:
        v = compute_stat(spec, prims, series, StatSpec.parse(s))
        cols.append(v)
        header += [f"{s}[{k}]" for k in range(v.shape[1])]
        for k, tot in enumerate(v.sum(axis=0)):
            art.summary[f"total.{s}[{k}]"] = float(tot)
    M = np.column_stack(cols) if cols else np.zeros((series.n, 0))
    art.table("stats.csv", header, ([i, *row] for i, row in zip(series.node_ids.tolist(), M.tolist())))
    return True


def cmd_stabilize(spec, run, art, threads):
    from .stabilization import stabilization_report

    prims, _ = _simulate(spec, run)
    scale = SparsityScale.from_spec(spec, run["n"])
    rep = stabilization_report(spec, prims, scale, run["stat"], nodes=run["nodes"], K=run["K"],
                               verify=True, fit_tails=len(prims) >= 500)
    art.write("stabilization.csv", rep.to_csv())
    art.summary.update(rep.summary())
    return rep.failures == 0


def cmd_branching(spec, run, art, threads):
    from .branching import BranchingConfig, h_D_norm, simulate_branching_batch
    from .stabilization import tail_fit

    norm = h_D_norm(spec)
    art.summary.update({"h_D_norm": norm.value, "subcritical": norm.subcritical})
    reps = run["reps"]
    gen = rng.generator(run["seed"], "branching_roots")
    roots_x = gen.random((reps, spec.d))
    roots_z = spec.attribute_law.sample(gen, (reps, spec.d_z)) if spec.d_z else None
    cfg = BranchingConfig(spec, run["intensity"], K=run["K"], seed=run["seed"])
    batch = simulate_branching_batch(cfg, roots_x, roots_z)
    art.table("sizes.csv", ["rep", "size", "truncated", "generations"],
              zip(range(reps), batch.sizes.tolist(), batch.truncated.tolist(), batch.generations.tolist()))
    art.summary.update({"mean_size": float(batch.sizes.mean()), "truncated": int(batch.truncated.sum())})
    if reps >= 500:
        fit = tail_fit(batch.sizes, seed=run["seed"])
        art.summary.update({"tail_slope": fit.slope, "tail_slope_ci_lo": fit.slope_ci[0],
                            "tail_slope_ci_hi": fit.slope_ci[1], "tail_degenerate": fit.degenerate})
    return norm.subcritical


def cmd_clt(spec, run, art, threads):
    from .inference import mc_clt

    ok = True
    for s in run["stat"]:
        rep = mc_clt(spec, run["n"], run["reps"], s, seed=run["seed"], threads=threads)
        tag = s.replace(":", "_").replace("=", "").replace("/", "_").replace(",", "_")
        art.write(f"clt_{tag}_draws.csv", rep.draws_csv())
        art.write(f"clt_{tag}_qq.csv", rep.qq_csv())
        art.summary.update({f"{s}.{k}": v for k, v in rep.summary().items()})
        crit = 1.63 / np.sqrt(rep.reps)
        ok &= bool(np.all(rep.zero_variance | (rep.ks_stat < crit)))
    return ok


def cmd_infer(spec, run, art, threads):
    from .formation import simulate
    from .inference import im_t_test, randomization_test
    from .moments import compute_stat

    G = run["networks"]

    def one(g):
        prims, series = simulate(spec, run["n"], seed=rng.derive_seed(run["seed"], "infer", g))
        return np.concatenate([compute_stat(spec, prims, series, s).mean(axis=0) for s in run["stat"]])

    means = np.array(pmap(one, range(G), threads))
    mu0 = np.zeros(means.shape[1]) if run["mu0"] is None else np.asarray(run["mu0"], float)
    p_rand = randomization_test(means, mu0, draws=run["draws"], seed=run["seed"])
    art.table("network_means.csv", ["network", *[f"m{k}" for k in range(means.shape[1])]],
              ([g, *row] for g, row in enumerate(means.tolist())))
    art.summary.update({"networks": G, "p_randomization": p_rand})
    if means.shape[1] == 1:
        art.summary["p_t_test"] = im_t_test(means[:, 0], float(mu0[0]))
    return p_rand >= 0.05


def cmd_sparsity(spec, run, art, threads):
    from .stabilization import sparsity_check

    res = sparsity_check(spec, run["n_grid"], run["reps"], seed=run["seed"],
                         map_fn=lambda f, xs: pmap(f, xs, threads))
    rows = []
    for a, n in enumerate(res.n_grid):
        for t in range(res.mean_degree.shape[1]):
            rows.append([n, t, res.mean_degree[a, t], res.se[a, t], res.limit[t]])
    art.table("sparsity.csv", ["n", "period", "mean_degree", "se", "limit"], rows)
    for t in range(res.mean_degree.shape[1]):
        art.summary[f"trend_slope_{t}"] = res.trend_slope[t]
        art.summary[f"trend_t_{t}"] = res.trend_t[t]
    ok = True
    for t, lim in enumerate(res.limit):
        if lim is not None:
            ok &= bool(np.all(np.abs(res.mean_degree[:, t] - lim) <= 0.1 * lim))
    return ok


def cmd_vardecomp(spec, run, art, threads):
    from .inference import poisson_variance_decomp

    ok = True
    for s in run["stat"]:
        rep = poisson_variance_decomp(spec, run["n"], run["reps"], s, seed=run["seed"], threads=threads)
        art.summary.update({f"{s}.{k}": v for k, v in rep.summary().items()})
        gap = rep.relative_gap
        ok &= bool(np.all(np.where(rep.sigma2 == 0, rep.absolute_gap < 1e-9, gap <= 0.15)))
    return ok


HANDLERS = {
    "simulate": cmd_simulate, "moments": cmd_moments, "stabilize": cmd_stabilize, "branching": cmd_branching,
    "clt": cmd_clt, "infer": cmd_infer, "sparsity": cmd_sparsity, "vardecomp": cmd_vardecomp,
}


def run(config_path, overrides=(), command: str | None = None) -> int:
    """Programmatic entry point: ``run("cfg.json", ["--n", "50"], "simulate")``."""
    argv = ([command] if command else []) + list(overrides)
    if config_path is not None:
        argv += ["--config", str(config_path)]
    return main(argv)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        spec, run_params, resolved = load_config(args.config, args)
        art = Artifacts(args.out)
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        ok = HANDLERS[args.command](spec, run_params, art, max(1, args.threads))
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StratnetError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    art.summary["check_passed"] = bool(ok)
    art.finish(resolved, run_params["seed"])
    for k, v in art.summary.items():
        print(f"{k} = {_fmt(v)}")
    if args.check and not ok:
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
