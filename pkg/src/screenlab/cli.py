"""Command-line entry point: ``screenlab <command> [flags]``.

Commands read one JSON config (merged over the packaged defaults) and write
machine-readable outputs into ``--out``. Seeds come only from the config or
``--seed``; timestamps go to ``run.log`` and never into data files.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import design, verify
from .errors import ScreenlabError
from .evalkit import EvalInputs, evaluate
from .objective import TrainConfig, train
from .oracle import ActivityOracle, default_library, default_oracle, load_oracle
from .predictor import load_predictor, save_predictor
from .screen import LabeledCells, allocate, load_dataset, read_labeled_csv, save_dataset, simulate_cells
from .seqmodel import SequenceDistribution, load_distribution, sample_sequences

log = logging.getLogger("screenlab")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
SWEEP_COLUMNS = [
    "q", "objective", "seed",
    "accuracy_est", "accuracy_true", "auprc_est", "auprc_true", "ece_est", "ece_true",
]


class ConfigError(Exception):
    pass


# --- configuration ------------------------------------------------------------------


def _packaged(name: str) -> Path:
    return Path(str(resources.files("screenlab") / "data" / name))


def default_config() -> dict:
    return json.loads(_packaged("default_config.json").read_text())


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    cfg = default_config()
    cfg["_base"] = str(_packaged(""))
    if path is None:
        return cfg
    path = Path(path)
    try:
        user = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"--config: {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"--config: {path} is not valid JSON ({e})") from None
    if not isinstance(user, dict):
        raise ConfigError("--config: top level must be a JSON object")
    cfg = _merge(cfg, user)
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def _resolve(cfg, rel):
    if rel is None:
        return None
    p = Path(rel)
    p = p if p.is_absolute() else Path(cfg["_base"]) / p
    if not p.exists():
        raise ConfigError(f"referenced file {p} does not exist")
    return p


def _library(cfg) -> SequenceDistribution:
    path = _resolve(cfg, cfg.get("library"))
    return default_library() if path is None else load_distribution(path)


def _oracle(cfg) -> ActivityOracle:
    path = _resolve(cfg, cfg.get("oracle"))
    return default_oracle() if path is None else load_oracle(path)


def _train_config(cfg, seed, objective=None) -> TrainConfig:
    opts = dict(cfg.get("train", {}))
    if objective is not None:
        opts["objective"] = objective
    opts["seed"] = int(seed)
    try:
        return TrainConfig(**opts)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train config: {e}") from None


def _population(cfg, dist, oracle, seed) -> LabeledCells:
    pop = cfg.get("population", {})
    csv_path = _resolve(cfg, pop.get("csv"))
    if csv_path is not None:
        return read_labeled_csv(csv_path, dist.alphabet)
    return simulate_cells(dist, oracle, int(pop.get("N", 10**6)), [int(seed), 0])


# --- experiment cells ---------------------------------------------------------------


def make_eval_set(dist, oracle, seed, heldout_N, M, truth_N, K=10):
    """Independent heldout screen, library draws and labeled truth sample for one seed."""
    heldout = simulate_cells(dist, oracle, heldout_N, [int(seed), 1])
    inputs = EvalInputs(
        heldout.sequences[heldout.y == 1],
        heldout.n_positive / len(heldout),
        sample_sequences(dist, M, [int(seed), 2]),
        K=K,
    )
    truth = simulate_cells(dist, oracle, truth_N, [int(seed), 3])
    return inputs, (truth.sequences, truth.y)


def run_cell(task) -> dict:
    """Allocate, train and evaluate one (q, objective, seed) cell."""
    cells, dist, cfg, q, objective, seed, inputs, labeled = task
    ds = allocate(cells, int(cfg["screen"]["n"]), q, [int(seed), 4], dist.alphabet)
    pred, _ = train(ds, cfg["architecture"], cfg["head"], _train_config(cfg, seed, objective), dist)
    rep = evaluate(pred, inputs, labeled, float(cfg["eval"].get("threshold", 0.5)))
    return {
        "q": float(q),
        "objective": objective,
        "seed": int(seed),
        "accuracy_est": rep.accuracy_est,
        "accuracy_true": rep.accuracy_true,
        "auprc_est": rep.auprc_est,
        "auprc_true": rep.auprc_true,
        "ece_est": rep.ece_est,
        "ece_true": rep.ece_true,
    }


def worker_count() -> int:
    env = os.environ.get("SCREENLAB_THREADS")
    if env is None:
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"SCREENLAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("SCREENLAB_THREADS must be at least 1")
    return n


def parallel_map(fn, tasks, workers):
    """Order-preserving map; results do not depend on ``workers``."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in columns) + "\n")


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        for k in SWEEP_COLUMNS:
            if k not in ("objective", "seed"):
                r[k] = float(r[k])
    return rows


# --- commands -----------------------------------------------------------------------


def _seeds(cfg, args):
    return args.seed if args.seed else [int(s) for s in cfg.get("seeds", [0])]


def cmd_simulate(cfg, args, out: Path):
    dist, oracle = _library(cfg), _oracle(cfg)
    q = args.q if args.q is not None else float(cfg["screen"]["q"])
    for seed in _seeds(cfg, args):
        cells = _population(cfg, dist, oracle, seed)
        ds = allocate(cells, int(cfg["screen"]["n"]), q, [int(seed), 4], dist.alphabet, meta={"N": len(cells)})
        save_dataset(ds, out / f"dataset_seed{seed}.jsonl")
        log.info("seed %d: N=%d pool=%s measured=%s", seed, ds.N, ds.pool_counts, ds.measured_counts)


def cmd_train(cfg, args, out: Path):
    dist, oracle = _library(cfg), _oracle(cfg)
    q = args.q if args.q is not None else float(cfg["screen"]["q"])
    for seed in _seeds(cfg, args):
        dataset_path = _resolve(cfg, cfg.get("dataset"))
        if dataset_path is not None:
            ds = load_dataset(dataset_path)
        else:
            cells = _population(cfg, dist, oracle, seed)
            ds = allocate(cells, int(cfg["screen"]["n"]), q, [int(seed), 4], dist.alphabet, meta={"N": len(cells)})
        tcfg = _train_config(cfg, seed, args.objective)
        pred, hist = train(ds, cfg["architecture"], cfg["head"], tcfg, dist)
        save_predictor(pred, out / f"checkpoint_seed{seed}.json")
        hist.to_csv(out / f"history_seed{seed}.csv")
        final = hist.loss_xy[-1] if hist.epoch else float("nan")
        log.info("seed %d: trained %s for %d epochs, final loss_xy %.6g", seed, tcfg.objective, tcfg.epochs, final)


def cmd_evaluate(cfg, args, out: Path):
    dist, oracle = _library(cfg), _oracle(cfg)
    ev = cfg["eval"]
    for seed in _seeds(cfg, args):
        ckpt = _resolve(cfg, cfg.get("checkpoint")) or out / f"checkpoint_seed{seed}.json"
        if not Path(ckpt).exists():
            raise ConfigError(f"no checkpoint at {ckpt}; set 'checkpoint' in --config or run train first")
        pred = load_predictor(ckpt)
        inputs, labeled = make_eval_set(dist, oracle, seed, int(ev["heldout_N"]), int(ev["M"]), int(ev["truth_N"]), int(ev["K"]))
        rep = evaluate(pred, inputs, labeled, float(ev.get("threshold", 0.5)))
        rep.save(out / f"report_seed{seed}.json")
        rep.curve_est.to_csv(out / f"pr_curve_seed{seed}.csv")
        log.info("seed %d: accuracy %.4f auprc %.4f ece %.4f", seed, rep.accuracy_est, rep.auprc_est, rep.ece_est)


def cmd_design(cfg, args, out: Path):
    dcfg = cfg.get("design", {})
    hit_rate = args.hit_rate if args.hit_rate is not None else dcfg.get("hit_rate")
    family = dcfg.get("family")
    if family is None:
        if hit_rate is None:
            raise ConfigError("design needs --hit-rate or a 'design.family' config")
        d = int(dcfg.get("d", 1))
        rec = design.recommend_allocation(hit_rate)
        report = {"hit_rate": hit_rate, "recommended_q": rec.q, "fallback": rec.fallback, "reason": rec.reason}
        if 0 < hit_rate < 1 / 3:
            report["info_gain_bound_nats"], report["sample_size_multiplier"] = design.info_gain_bound(hit_rate, d)
        (out / "design.json").write_text(json.dumps(report, indent=1, sort_keys=True))
        log.info("hit rate %g: recommended q = %g", hit_rate, rec.q)
        return
    fam = verify.SmoothSparseFamily1D(**family)
    info = design.information_matrices(fam.sparse_family(), fam.dist, int(dcfg.get("M", 100000)), _seeds(cfg, args)[0])
    report = design.design_report(info, fam.p1 if hit_rate is None else hit_rate)
    report.save(out / "design.json")
    report.save_det_csv(out / "det_curve.csv")
    log.info("D-optimal grid q = %g", report.q_grid[int(np.flatnonzero(report.det_Hq == report.det_Hq.max())[-1])])


def cmd_sweep_q(cfg, args, out: Path):
    dist, oracle = _library(cfg), _oracle(cfg)
    ev, sweep = cfg["eval"], cfg.get("sweep", {})
    objectives = [args.objective] if args.objective else list(sweep.get("objectives", ["xy", "leavs"]))
    tasks = []
    for seed in _seeds(cfg, args):
        cells = _population(cfg, dist, oracle, seed)
        p1 = cells.n_positive / len(cells)
        grid = sweep.get("q_grid")
        grid = design.default_q_grid(p1) if grid is None else np.union1d(np.asarray(grid, dtype=float), [p1])
        if args.q is not None:
            grid = np.array([args.q])
        inputs, labeled = make_eval_set(dist, oracle, seed, int(ev["heldout_N"]), int(ev["M"]), int(ev["truth_N"]), int(ev["K"]))
        tasks += [(cells, dist, cfg, float(q), obj, seed, inputs, labeled) for q in grid for obj in objectives]
    log.info("sweep: %d cells on %d workers", len(tasks), worker_count())
    rows = parallel_map(run_cell, tasks, worker_count())
    rows.sort(key=lambda r: (r["q"], r["objective"], r["seed"]))
    write_csv(rows, SWEEP_COLUMNS, out / "sweep_q.csv")


def _verify_mle(task):
    fam_kw, q, n_grid, objective, seed = task
    return verify.mle_path(verify.SmoothSparseFamily1D(**fam_kw), q, n_grid, objective, [seed])


def _verify_bvm(task):
    fam_kw, n_grid, seed, H1 = task
    fam = verify.SmoothSparseFamily1D(**fam_kw)
    rows = []
    for n in n_grid:
        n1, n0 = fam.sample_counts(int(n), 1.0, np.random.default_rng(np.random.SeedSequence([int(seed), int(n)])))
        sd = 1.0 / np.sqrt(n * np.linalg.eigvalsh(H1).min())
        box = [[t - 12 * sd, t + 12 * sd] for t in fam.theta0]
        pg = verify.posterior_grid(fam, n1, n0, box, 1201 if fam.d == 1 else 121, n * H1)
        rows.append({"seed": int(seed), "n": int(n), "tv": pg.tv, "map_theta": [float(t) for t in pg.map_theta]})
    return rows


def cmd_verify_theory(cfg, args, out: Path):
    vcfg = cfg.get("verify", {})
    fam_kw = vcfg.get("family", {})
    fam = verify.SmoothSparseFamily1D(**fam_kw)
    seeds = _seeds(cfg, args) if args.seed else [int(s) for s in vcfg.get("seeds", range(10))]
    n_grid = [int(n) for n in vcfg.get("n_grid", [50, 500, 5000])]
    qs = [args.q] if args.q is not None else [fam.p1, 0.5, 1.0]
    objectives = vcfg.get("objectives", ["leavs", "leavs-soft", "xy-only"])
    workers = worker_count()

    tasks = [(fam_kw, q, n_grid, obj, s) for obj in objectives for q in qs for s in seeds]
    rows = [r for chunk in parallel_map(_verify_mle, tasks, workers) for r in chunk]
    verify.save_rows_csv(rows, out / "mle_path.csv", ["objective", "q", "seed", "n", "param_error", "tv", "level_hat", "theta_hat"])

    info = verify.exact_information(fam)
    H1 = design.asymptotic_precision(1.0, info.I0, info.I1, info.p_S0_given_y0)
    bvm = [r for chunk in parallel_map(_verify_bvm, [(fam_kw, n_grid, s, H1) for s in seeds], workers) for r in chunk]
    verify.save_rows_csv(bvm, out / "bvm.csv", ["seed", "n", "tv", "map_theta"])

    grid = design.default_q_grid(fam.p1)
    dets = design.det_curve(info.I0, info.I1, info.p_S0_given_y0, grid)
    gains = [verify.entropy_gain(info, 1.0, q) for q in grid]
    verify.save_rows_csv(
        [{"q": float(q), "det_Hq": float(d), "entropy_gain_q1_over_q": g} for q, d, g in zip(grid, dets, gains)],
        out / "design_curve.csv",
    )
    log.info("verification tables written to %s", out)


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "design": cmd_design,
    "sweep-q": cmd_sweep_q,
    "verify-theory": cmd_verify_theory,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="screenlab", description="Sort-then-sequence screen experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON config merged over the packaged defaults")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides config seeds")
        sp.add_argument("--q", type=float, help="allocation: fraction of the budget spent on positives")
        sp.add_argument("--objective", choices=["xy", "leavs"], help="training objective")
        sp.add_argument("--hit-rate", type=float, help="observed hit rate for the design rule")
        sp.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")
    return ap


def _setup_logging(out: Path, quiet: bool):
    log.handlers.clear()
    log.setLevel(logging.INFO)
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(logging.WARNING if quiet else logging.INFO)
    err.setFormatter(logging.Formatter("%(message)s"))
    fileh = logging.FileHandler(out / "run.log")
    fileh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(err)
    log.addHandler(fileh)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.q is not None and not 0.0 <= args.q <= 1.0:
        print("error: --q must lie in [0, 1]", file=sys.stderr)
        return EXIT_CONFIG
    if args.hit_rate is not None and not 0.0 <= args.hit_rate <= 1.0:
        print("error: --hit-rate must lie in [0, 1]", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"error: --out: cannot create {args.out} ({e})", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(args.out, args.quiet)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg, args, args.out)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (KeyError, TypeError) as e:
        log.error("config error: bad or missing setting %s", e)
        return EXIT_CONFIG
    except (ScreenlabError, ValueError, ArithmeticError, RuntimeError, OSError) as e:
        log.error("runtime error: %s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
