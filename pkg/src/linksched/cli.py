"""Command-line entry point: ``linksched <command> [options]``.

Commands: gen-data, train, eval, simulate, exact.  Every command that writes
an output directory also writes ``manifest.json`` there.  Exit codes: 0 ok,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from linksched import __version__
from linksched.datasets import DatasetSpec, Instance, generate, read_dataset, write_dataset
from linksched.distributed import init_mlp
from linksched.exact import ExactBudget, mwis_exact
from linksched.gcn import ModelFormatError, identity_model, init_model, load_model, save_model
from linksched.graph import GraphFormatError, GraphSchemaError, load_graph
from linksched.solvers import MODEL_SLOTS, MissingModelError, SolverOptions, build_solver
from linksched.training import (
    LOG_COLUMNS,
    ConfigError,
    TrainConfig,
    crts_train,
    dpg_train,
    dqn_train,
    write_log,
)

log = logging.getLogger("linksched")

CSV_SCHEMA = 1
ENV_PREFIX = "LINKSCHED_"
EVAL_COLUMNS = (
    "instance",
    "family",
    "V",
    "degree",
    "solver",
    "utility",
    "optimal_utility",
    "ar",
    "optimal",
    "rounds",
    "messages",
)
AGG_COLUMNS = ("solver", "family", "V", "degree", "n", "mean_ar")
SIM_COLUMNS = (
    "network_seed",
    "instance",
    "scheduler",
    "mode",
    "K",
    "load",
    "throughput",
    "median_backlog",
    "mean_ar",
    "rounds_mean",
)


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


# -- plumbing -------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    version: str = __version__
    csv_schema: int = CSV_SCHEMA
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> None:
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def config_hash(config: dict, seed: int) -> str:
    blob = json.dumps({"config": config, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as e:
        raise UsageError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    return doc


def prepare_out(path: str | None, force: bool) -> Path:
    if path is None:
        raise UsageError("--out is required")
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def fmt(x) -> str:
    """Locale-free, round-trippable formatting for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def _env_default(name: str, cast, fallback):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError as e:
        raise UsageError(f"bad value for {ENV_PREFIX}{name}: {raw!r}") from e


def _seed(args, config: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", _env_default("SEED", int, 0)))


def _workers(args) -> int:
    w = args.workers if args.workers is not None else _env_default("WORKERS", int, 1)
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


def _load_models(paths: dict) -> dict:
    models = {}
    for slot, p in (paths or {}).items():
        try:
            models[slot] = load_model(p)
        except FileNotFoundError as e:
            raise RuntimeFailure(f"model file for {slot!r} not found: {p}") from e
        except ModelFormatError as e:
            raise RuntimeFailure(str(e)) from e
    return models


def _dataset(args, config: dict, seed: int) -> list[Instance]:
    data = getattr(args, "data", None) or config.get("data")
    if data:
        if not Path(data).is_dir():
            raise RuntimeFailure(f"dataset directory not found: {data}")
        return read_dataset(data)
    spec = dict(config.get("dataset", {}))
    spec.setdefault("seed", seed)
    try:
        return generate(DatasetSpec.from_dict(spec))
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad dataset spec: {e}") from e


# -- gen-data -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = load_config(args.config)
    seed = _seed(args, config)
    try:
        spec = DatasetSpec.from_dict({**config.get("dataset", config), "seed": seed})
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad dataset spec: {e}") from e
    out = prepare_out(args.out, args.force)
    man = RunManifest("gen-data", config_hash(spec.to_dict(), seed), seed, started=_now())
    paths = write_dataset(generate(spec), out)
    man.outputs = [p.name for p in paths]
    man.finished = _now()
    man.write(out)
    print(f"wrote {len(paths)} graphs to {out}")
    return 0


# -- train ----------------------------------------------------------------


def _initial_model(config: dict, trainer: str, seed: int, init_path: str | None):
    if init_path:
        try:
            return load_model(init_path)
        except (FileNotFoundError, ModelFormatError) as e:
            raise RuntimeFailure(f"cannot load initial model: {e}") from e
    spec = config.get("model", {})
    kind = spec.get("kind", {"dpg": "gcn", "crts": "crts", "dqn": "q"}[trainer])
    if kind == "mlp":
        return init_mlp(spec.get("depth", 5), spec.get("width", 32), seed, spec.get("noise", 0.1))
    if kind == "gcn":
        if spec.get("init", "identity") == "identity":
            return identity_model(features=spec.get("features", "ones"))
        return init_model(spec.get("dims", [1, 1]), seed, features=spec.get("features", "ones"))
    if kind == "q":
        return init_model(spec.get("dims", [1, 32, 32, 32, 32, 1]), seed, output_kind="q")
    if kind == "crts":
        return init_model(spec.get("dims", [1, 32, 32, 32, 64]), seed, output_kind="crts")
    raise UsageError(f"unknown model kind {kind!r}")


def cmd_train(args) -> int:
    config = load_config(args.config)
    seed = _seed(args, config)
    trainer = args.trainer or config.get("trainer", "dpg")
    if trainer not in ("dpg", "crts", "dqn"):
        raise UsageError(f"unknown trainer {trainer!r}")
    keys = ("lr", "batch_size", "epochs", "val_fraction", "momentum", "reset_period", "grad_clip", "buffer_capacity", "eps_decay", "eps_min")
    try:
        tc = TrainConfig(seed=seed, **{k: config[k] for k in keys if k in config})
    except (TypeError, ConfigError) as e:
        raise UsageError(f"bad training config: {e}") from e
    out = prepare_out(args.out, args.force)
    man = RunManifest("train", config_hash({**config, "trainer": trainer, "init": args.init_model}, seed), seed, started=_now())
    graphs = [inst.graph for inst in _dataset(args, config, seed)]
    model = _initial_model(config, trainer, seed, args.init_model)
    try:
        if trainer == "dpg":
            res = dpg_train(graphs, tc, model, config.get("downstream", "lgs"))
            model, rows, cols = res.model, res.log, LOG_COLUMNS
        elif trainer == "crts":
            model, rows = crts_train(graphs, tc, model)
            cols = ("epoch", "mean_loss")
        else:
            model, rows = dqn_train(graphs, tc, model)
            cols = ("epoch", "mean_gamma", "mean_loss", "epsilon")
    except FloatingPointError as e:
        raise RuntimeFailure(f"training diverged: {e}") from e
    except ConfigError as e:
        raise UsageError(str(e)) from e
    if not model.is_finite():
        raise RuntimeFailure("trained model has non-finite parameters")
    save_model(model, out / "model.json")
    write_log(rows, out / "train_log.csv", cols)
    man.outputs = ["model.json", "train_log.csv"]
    man.finished = _now()
    man.write(out)
    print(f"saved model to {out / 'model.json'}")
    return 0


# -- eval -----------------------------------------------------------------


def _solver_options(config: dict) -> SolverOptions:
    ex = config.get("exact", {})
    return SolverOptions(
        branching=config.get("branching", 32),
        crts_timeout=config.get("crts_timeout", 10.0),
        crts_max_pops=config.get("crts_max_pops"),
        crts_backtrack=config.get("crts_backtrack", 0.02),
        exact=ExactBudget(ex.get("node_limit", 5_000_000), ex.get("time_limit", 60.0)),
    )


_WORKER_STATE: dict = {}


def _eval_init(solver_names, model_paths, opts_doc):
    models = _load_models(model_paths)
    opts = _solver_options(opts_doc)
    _WORKER_STATE["solvers"] = {n: build_solver(n, models, opts) for n in solver_names}
    _WORKER_STATE["exact"] = build_solver("exact", {}, opts)


def _eval_instance(job) -> list[dict]:
    inst, seed = job
    u = inst.u if inst.u is not None else np.random.default_rng(seed).random(inst.graph.n)
    opt = _WORKER_STATE["exact"](inst.graph, u)
    rows = []
    for name, solver in _WORKER_STATE["solvers"].items():
        res = opt if name == "exact" else solver(inst.graph, u, seed=seed)
        ar = res.utility / opt.utility if opt.utility > 0 else 1.0
        rows.append(
            {
                "instance": inst.name,
                "family": inst.family,
                "V": inst.graph.n,
                "degree": inst.degree,
                "solver": name,
                "utility": res.utility,
                "optimal_utility": opt.utility,
                "ar": ar if opt.optimal else None,
                "optimal": bool(opt.optimal),
                "rounds": res.rounds,
                "messages": res.messages,
            }
        )
    return rows


def aggregate(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        if r["ar"] is None:
            continue
        for key in ((r["solver"], r["family"], r["V"], r["degree"]), (r["solver"], "all", "", "")):
            groups.setdefault(key, []).append(r["ar"])
    return [
        {"solver": k[0], "family": k[1], "V": k[2], "degree": k[3], "n": len(v), "mean_ar": float(np.mean(v))}
        for k, v in sorted(groups.items(), key=lambda kv: tuple(str(x) for x in kv[0]))
    ]


def cmd_eval(args) -> int:
    config = load_config(args.config)
    seed = _seed(args, config)
    names = list(config.get("solvers", ["cgs", "lgs"]))
    model_paths = dict(config.get("models", {}))
    if args.model:
        model_paths["gcn"] = args.model
    for n in names:
        slot = MODEL_SLOTS.get(n)
        if slot and slot not in model_paths:
            raise RuntimeFailure(f"solver {n!r} needs a {slot!r} model (set models.{slot} in the config)")
    workers = _workers(args)
    out = prepare_out(args.out, args.force)
    man = RunManifest("eval", config_hash({**config, "models": model_paths}, seed), seed, started=_now())
    instances = _dataset(args, config, seed)
    jobs = [(inst, int(np.random.SeedSequence([seed, i]).generate_state(1)[0])) for i, inst in enumerate(instances)]
    try:
        if workers == 1:
            _eval_init(names, model_paths, config)
            chunks = [_eval_instance(j) for j in jobs]
        else:
            with ProcessPoolExecutor(workers, initializer=_eval_init, initargs=(names, model_paths, config)) as pool:
                chunks = list(pool.map(_eval_instance, jobs))
    except MissingModelError as e:
        raise RuntimeFailure(str(e)) from e
    rows = [r for c in chunks for r in c]
    write_csv(out / "results.csv", EVAL_COLUMNS, rows)
    agg = aggregate(rows)
    write_csv(out / "aggregate.csv", AGG_COLUMNS, agg)
    man.outputs = ["results.csv", "aggregate.csv"]
    man.finished = _now()
    man.write(out)
    for r in agg:
        if r["family"] == "all":
            print(f"{r['solver']:>16s}  mean AR {r['mean_ar']:.4f}  (n={r['n']})")
    return 0


# -- simulate -------------------------------------------------------------


def _sim_job(job) -> list[dict]:
    from linksched.sim import SimConfig, arrival_rate_for_load, compare, gen_network, make_scheduler, service_fraction

    net_seed, inst, config, model_paths, mode, K, load = job
    models = _load_models(model_paths)
    net_cfg = config.get("network", {})
    net = gen_network(
        net_cfg.get("n_users", 100),
        net_cfg.get("area", 250.0),
        net_cfg.get("link_radius", 1.0),
        net_cfg.get("interf_radius", 4.0),
        seed=net_seed,
    )
    budget = _solver_options(config).exact
    scheds = {}
    for name in config.get("schedulers", ["exact", "lgs"]):
        slot = MODEL_SLOTS.get(name)
        scheds[name] = make_scheduler(name, models.get(slot) if slot else None, config.get("branching", 32), budget)
    cfg = SimConfig(
        slots=config.get("slots", 200),
        channels=K,
        utility_kind=config.get("utility", "min"),
        channel_mode=mode,
        check_oracle=config.get("score_exact", True),
        exact_budget=budget,
    )
    if load is not None:
        frac = service_fraction(net, cfg, seed=net_seed)
        cfg.arrival_rate = arrival_rate_for_load(load, cfg.rate_mean, frac, config.get("load_mapping", "service"))
    res = compare(net, scheds, cfg, seed=[net_seed, inst], reference="exact" if "exact" in scheds else None)
    return [
        {
            "network_seed": net_seed,
            "instance": inst,
            "scheduler": name,
            "mode": mode,
            "K": K,
            "load": "oversaturated" if load is None else load,
            "throughput": r["throughput"],
            "median_backlog": r["median_backlog"],
            "mean_ar": r["mean_ar"] if cfg.check_oracle else None,
            "rounds_mean": r["rounds_mean"],
        }
        for name, r in res.items()
    ]


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    seed = _seed(args, config)
    model_paths = dict(config.get("models", {}))
    if args.model:
        model_paths["gcn"] = args.model
    for n in config.get("schedulers", ["exact", "lgs"]):
        slot = MODEL_SLOTS.get(n)
        if slot and slot not in model_paths:
            raise RuntimeFailure(f"scheduler {n!r} needs a {slot!r} model")
    workers = _workers(args)
    out = prepare_out(args.out, args.force)
    man = RunManifest("simulate", config_hash({**config, "models": model_paths}, seed), seed, started=_now())
    K = config.get("channels", 1)
    modes = config.get("modes", ["joint"]) if K > 1 else ["joint"]
    loads = config.get("loads", [None])
    jobs = [
        (seed + i, inst, config, model_paths, mode, K, load)
        for i in range(config.get("networks", 10))
        for inst in range(config.get("instances", 1))
        for mode in modes
        for load in loads
    ]
    if workers == 1:
        chunks = [_sim_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_sim_job, jobs))
    rows = [r for c in chunks for r in c]
    write_csv(out / "simulation.csv", SIM_COLUMNS, rows)
    man.outputs = ["simulation.csv"]
    man.finished = _now()
    man.write(out)
    print(f"wrote {len(rows)} rows to {out / 'simulation.csv'}")
    return 0


# -- exact ----------------------------------------------------------------


def cmd_exact(args) -> int:
    try:
        g, w = load_graph(args.graph)
    except FileNotFoundError as e:
        raise RuntimeFailure(f"graph file not found: {args.graph}") from e
    except (GraphFormatError, GraphSchemaError) as e:
        raise RuntimeFailure(str(e)) from e
    u = np.ones(g.n) if w is None else np.asarray(w, dtype=float)
    try:
        res = mwis_exact(g, u, ExactBudget(args.node_limit, args.time_limit))
    except ValueError as e:
        raise RuntimeFailure(str(e)) from e
    if not res.optimal:
        print("warning: search budget exhausted, value is a lower bound", file=sys.stderr)
    print(json.dumps({"value": res.utility, "set": list(res.solution), "optimal": bool(res.optimal)}))
    return 0


# -- entry ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linksched", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--workers", type=int, help="parallel worker processes")
        if out:
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--force", action="store_true", help="allow a non-empty output directory")

    sp = sub.add_parser("gen-data", help="generate a graph dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", help="dataset directory (default: generate from config)")
    sp.add_argument("--trainer", choices=["dpg", "crts", "dqn"])
    sp.add_argument("--init-model", help="start from this model file")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score solvers against the exact optimum")
    common(sp)
    sp.add_argument("--data", help="dataset directory (default: generate from config)")
    sp.add_argument("--model", help="GCN model file (shortcut for models.gcn)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("simulate", help="run the scheduling simulation")
    common(sp)
    sp.add_argument("--model", help="GCN model file (shortcut for models.gcn)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("exact", help="solve one graph file exactly")
    sp.add_argument("graph")
    sp.add_argument("--node-limit", type=int, default=5_000_000)
    sp.add_argument("--time-limit", type=float, default=60.0)
    sp.set_defaults(func=cmd_exact)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RuntimeFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
