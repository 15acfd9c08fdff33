"""Command-line entry point: experiment orchestration, benchmarks, plots."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import re
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, lifelong as ll, planner as pl, sem as sem_mod, theory as th
from .lifelong import LifelongConfig, derive_seed, evaluate
from .planner import TASKS, format_plan, preset_config, random_order_search, wastar
from .sem import SemBackend, init_model, load_checkpoint, save_checkpoint, train
from .worldsim import DEFAULT_GEOMETRY, Geometry, GroundTruthBackend, SKILLS, sample_initial_state

# metrics.csv holds only seed-deterministic quantities so identical runs are
# byte-identical; wall-clock telemetry goes to timings.csv instead
METRICS_COLUMNS = ["round", "task", "n_skills", "success_rate", "mean_cost",
                   "weighted_cost", "expansions", "new_skill_plan_rate"]
TIMINGS_COLUMNS = ["round", "task", "plan_time_ms"]


class UsageError(ValueError):
    pass


# --- configuration ---

@dataclass
class RunConfig:
    geometry: Geometry = field(default_factory=Geometry)
    counts: dict[int, int] = field(default_factory=lambda: {0: 3, 1: 3})
    lifelong: LifelongConfig = field(default_factory=LifelongConfig)
    out_dir: str = "out"
    base_seed: int = 0
    backend: str = "sem"

    def validate(self):
        if self.backend not in ("sem", "ground-truth"):
            raise UsageError(f"unknown backend {self.backend!r}")
        g = self.geometry
        if not (g.bin_x[0] <= g.bin_split_x <= g.bin_x[1]):
            raise UsageError("bin split plane outside bin extents")
        if g.reach_limit_x > g.bin_split_x:
            raise UsageError("reach limit must not extend past the far-bin boundary")
        if not (g.table_x[0] <= g.tray_x[0] and g.tray_x[1] <= g.table_x[1]
                and g.table_y[0] <= g.tray_y[0] and g.tray_y[1] <= g.table_y[1]):
            raise UsageError("tray rectangle must lie inside the table")
        self.lifelong.__post_init__()


_KNOWN_TOP_KEYS = {"geometry", "counts", "lifelong", "out_dir", "base_seed", "backend"}


def _strip_comments(text: str) -> str:
    return re.sub(r"^\s*//.*$", "", text, flags=re.M)


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["counts"] = {str(k): v for k, v in d["counts"].items()}
    d["lifelong"]["counts"] = {str(k): v for k, v in d["lifelong"]["counts"].items()}
    d["lifelong"]["skill_schedule"] = {str(k): v for k, v in d["lifelong"]["skill_schedule"].items()}
    return d


def config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - _KNOWN_TOP_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig()
    if "geometry" in d:
        geo_fields = {f.name for f in dataclasses.fields(Geometry)}
        bad = set(d["geometry"]) - geo_fields
        if bad:
            raise UsageError(f"unknown geometry keys: {sorted(bad)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d["geometry"].items()}
        cfg.geometry = Geometry(**kwargs)
    if "counts" in d:
        cfg.counts = {int(k): int(v) for k, v in d["counts"].items()}
    if "lifelong" in d:
        ll_fields = {f.name for f in dataclasses.fields(LifelongConfig)}
        bad = set(d["lifelong"]) - ll_fields
        if bad:
            raise UsageError(f"unknown lifelong keys: {sorted(bad)}")
        kwargs = dict(d["lifelong"])
        if "skill_schedule" in kwargs:
            kwargs["skill_schedule"] = {int(k): list(v) for k, v in kwargs["skill_schedule"].items()}
        if "counts" in kwargs:
            kwargs["counts"] = {int(k): int(v) for k, v in kwargs["counts"].items()}
        if "train_tasks" in kwargs:
            kwargs["train_tasks"] = tuple(kwargs["train_tasks"])
        if "test_tasks" in kwargs:
            kwargs["test_tasks"] = tuple(kwargs["test_tasks"])
        cfg.lifelong = LifelongConfig(**kwargs)
    cfg.out_dir = d.get("out_dir", cfg.out_dir)
    cfg.base_seed = int(d.get("base_seed", cfg.base_seed))
    cfg.backend = d.get("backend", cfg.backend)
    cfg.validate()
    return cfg


def load_config(path: Path) -> RunConfig:
    text = _strip_comments(Path(path).read_text())
    return config_from_dict(json.loads(text))


DEFAULT_CONFIG_HEADER = """\
// Run configuration. Unknown keys are rejected.
// geometry: workspace layout (meters); counts: blocks per color id;
// lifelong: data-collection/training schedule; backend: sem | ground-truth.
"""


def write_default_config(path: Path):
    doc = config_to_dict(RunConfig())
    text = DEFAULT_CONFIG_HEADER + json.dumps(doc, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps({
        "config_hash": config_hash(cfg),
        "base_seed": cfg.base_seed,
        "version": __version__,
        "python": sys.version.split()[0],
    }, indent=2, sort_keys=True) + "\n")


# --- metrics CSV ---

def write_metrics(rows, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as f:
        w = csv.writer(f)
        if new_file:
            w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([r.round_index, r.task, r.n_skills,
                        repr(r.success_rate), repr(r.mean_cost), repr(r.weighted_cost),
                        repr(r.expansions), repr(r.new_skill_plan_rate)])
        f.flush()


def write_timings(rows, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as f:
        w = csv.writer(f)
        if new_file:
            w.writerow(TIMINGS_COLUMNS)
        for r in rows:
            w.writerow([r.round_index, r.task, f"{r.plan_time_ms:.1f}"])
        f.flush()


def read_metrics(path: Path) -> list[dict]:
    with Path(path).open(newline="") as f:
        return [dict(row) for row in csv.DictReader(f)]


# --- SVG curve rendering ---

SVG_W, SVG_H = 800, 500
MARGIN = 60

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def render_curves(csv_path: Path, columns: list[str], out_svg: Path,
                  marker_rounds: Optional[list[int]] = None,
                  dashed_columns: Optional[set[str]] = None):
    """Per-task polylines of selected metric columns, with vertical markers
    at skill-addition rounds."""
    rows = read_metrics(csv_path) if Path(csv_path).exists() else []
    for col in columns:
        if rows and col not in rows[0]:
            raise UsageError(f"column {col!r} not in {csv_path}")
    dashed_columns = dashed_columns or set()
    series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for row in rows:
        x = float(row["round"])
        for col in columns:
            v = float(row[col])
            if not np.isfinite(v) or v == ll.WEIGHTED_COST_SENTINEL and col == "weighted_cost":
                continue
            series.setdefault((row["task"], col), []).append((x, v))
    xs = [p[0] for pts in series.values() for p in pts] or [0, 1]
    ys = [p[1] for pts in series.values() for p in pts] or [0, 1]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = min(ys + [0.0]), max(ys) if max(ys) > min(ys + [0.0]) else min(ys) + 1

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * (SVG_W - 2 * MARGIN)

    def sy(y):
        return SVG_H - MARGIN - (y - y0) / (y1 - y0) * (SVG_H - 2 * MARGIN)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}">',
             f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>',
             f'<line x1="{MARGIN}" y1="{SVG_H - MARGIN}" x2="{SVG_W - MARGIN}" '
             f'y2="{SVG_H - MARGIN}" stroke="black"/>',
             f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" '
             f'y2="{SVG_H - MARGIN}" stroke="black"/>']
    for i in range(6):
        xv = x0 + i * (x1 - x0) / 5
        yv = y0 + i * (y1 - y0) / 5
        parts.append(f'<text x="{sx(xv):.1f}" y="{SVG_H - MARGIN + 18}" font-size="11" '
                     f'text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{MARGIN - 8}" y="{sy(yv) + 4:.1f}" font-size="11" '
                     f'text-anchor="end">{yv:.3g}</text>')
    for r in marker_rounds or []:
        parts.append(f'<line x1="{sx(r):.1f}" y1="{MARGIN}" x2="{sx(r):.1f}" '
                     f'y2="{SVG_H - MARGIN}" stroke="blue" stroke-width="1" opacity="0.6"/>')
    legend_y = MARGIN
    for i, ((task, col), pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        pts = sorted(pts)
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        dash = ' stroke-dasharray="6,4"' if col in dashed_columns else ""
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" '
                     f'stroke-width="2"{dash}/>')
        parts.append(f'<text x="{SVG_W - MARGIN + 4}" y="{legend_y}" font-size="12" '
                     f'fill="{color}">{task}:{col}</text>')
        legend_y += 16
    parts.append("</svg>")
    out_svg = Path(out_svg)
    out_svg.parent.mkdir(parents=True, exist_ok=True)
    out_svg.write_text("\n".join(parts) + "\n")


# --- subcommands ---

def _load_models(models_dir: Path, skills) -> dict:
    models = {}
    for skill in skills:
        path = Path(models_dir) / f"{skill}.json"
        if not path.exists():
            raise UsageError(f"missing model checkpoint {path}")
        models[skill] = load_checkpoint(path)
    return models


def _backend_for(args, cfg: RunConfig, skills):
    if args.backend == "ground-truth":
        return GroundTruthBackend(cfg.geometry)
    models_dir = Path(args.out) / "models"
    return SemBackend(_load_models(models_dir, skills))


def cmd_init_config(args, _cfg):
    write_default_config(Path(args.config))
    print(f"wrote {args.config}")
    return 0


def cmd_bootstrap(args, cfg: RunConfig):
    out = Path(args.out)
    write_manifest(cfg, out)
    skills = args.skills or list(SKILLS)
    lc = cfg.lifelong
    for skill in skills:
        ds = ll.bootstrap_skill(skill, cfg.geometry, lc.m0, lc.p0,
                                derive_seed(cfg.base_seed, "boot", skill), cfg.counts)
        ds.save_jsonl(out / "datasets" / f"{skill}.jsonl")
        model = init_model(skill, derive_seed(cfg.base_seed, "model", skill))
        if ds.records:
            rng = np.random.default_rng(derive_seed(cfg.base_seed, "boot-train", skill))
            hist = train(model, ds.records, lc.bootstrap_epochs or lc.epochs, rng)
            print(f"{skill}: {len(ds)} records, final loss {hist[-1]:.4f}")
        else:
            print(f"{skill}: empty bootstrap dataset")
        save_checkpoint(model, out / "models" / f"{skill}.json")
    return 0


def cmd_lifelong(args, cfg: RunConfig):
    out = Path(args.out)
    write_manifest(cfg, out)
    lc = cfg.lifelong
    if args.rounds is not None:
        lc.rounds = args.rounds
    lc.base_seed = cfg.base_seed
    lc.counts = cfg.counts
    metrics_path = out / "metrics.csv"

    def on_round(rnd, report, rows, models, datasets):
        write_metrics(rows, metrics_path)
        write_timings(rows, out / "timings.csv")
        added = sum(report.transitions_added.values())
        print(f"round {rnd}: +{added} transitions, "
              f"{report.plans_solved}/{report.plans_attempted} plans solved")

    ll.run_lifelong(lc, out_dir=out, geom=cfg.geometry, on_round=on_round)
    schedule_rounds = sorted(lc.skill_schedule)
    render_curves(metrics_path, ["success_rate"], out / "plots" / "success_rate.svg",
                  marker_rounds=schedule_rounds)
    render_curves(metrics_path, ["mean_cost"], out / "plots" / "mean_cost.svg",
                  marker_rounds=schedule_rounds)
    return 0


def cmd_plan(args, cfg: RunConfig):
    skills = tuple(args.skills or ["pick_place"])
    task = TASKS[args.task]
    backend = _backend_for(args, cfg, skills)
    start = sample_initial_state(cfg.geometry, cfg.counts, args.seed)
    pcfg = preset_config(args.task, skills)
    result = wastar(start, task, skills, backend, pcfg, seed=args.seed, geom=cfg.geometry)
    print(f"task {args.task} skills={','.join(skills)} backend={args.backend} "
          f"outcome={result.outcome.value} expansions={result.expansions} "
          f"elapsed={result.elapsed_s:.2f}s")
    if result.plan is not None:
        print(format_plan(result.plan, cfg.geometry))
    return 0


def cmd_eval(args, cfg: RunConfig):
    skills = tuple(args.skills or ["pick_place"])
    backend = _backend_for(args, cfg, skills)
    rows = evaluate([args.task], {}, skills, args.trials, cfg.base_seed,
                    cfg.counts, cfg.geometry, backend=backend)
    for r in rows:
        print(f"task {r.task}: success={r.success_rate:.2f} mean_cost={r.mean_cost:.3f} "
              f"weighted={r.weighted_cost:.3f} plan_time={r.plan_time_ms:.0f}ms "
              f"expansions={r.expansions:.1f}")
    return 0


def cmd_bench(args, cfg: RunConfig):
    which = args.which or ["planners"]
    out = Path(args.out)
    results = {}
    if "backends" in which:
        results["backends"] = bench_backends(cfg, args.trials)
    if "skills" in which:
        results["skills"] = bench_skill_scaling(cfg, args.trials)
    if "planners" in which:
        results["planners"] = bench_planners(cfg, args.trials)
    if "data" in which:
        results["data"] = bench_data_sources(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(results, indent=2) + "\n")
    print(json.dumps(results, indent=2))
    return 0


def bench_planners(cfg: RunConfig, trials: int = 20, skills=("pick_place", "tray_slide"),
                   task_id: str = "A"):
    """Guided WA* vs the random-order baseline on the ground-truth backend."""
    backend = GroundTruthBackend(cfg.geometry)
    task = TASKS[task_id]
    rows = {"wastar": {"expansions": [], "cost": []},
            "random": {"expansions": [], "cost": []}}
    for trial in range(trials):
        seed = derive_seed(cfg.base_seed, "bench-planner", trial)
        start = sample_initial_state(cfg.geometry, cfg.counts, seed)
        # fully greedy setting: this benchmark measures how far guidance gets
        # you over random expansion order, so crank the inflation; solution
        # costs are still reported for both planners
        pcfg = preset_config(task_id, skills, max_expansions=3000, epsilon=30.0)
        r1 = wastar(start, task, skills, backend, pcfg, seed=seed, geom=cfg.geometry)
        r2 = random_order_search(start, task, skills, backend, pcfg, seed=seed,
                                 geom=cfg.geometry)
        if r1.plan is not None:
            rows["wastar"]["expansions"].append(r1.expansions)
            rows["wastar"]["cost"].append(r1.plan.total_cost)
        if r2.plan is not None:
            rows["random"]["expansions"].append(r2.expansions)
            rows["random"]["cost"].append(r2.plan.total_cost)
    out = {}
    for name, d in rows.items():
        out[name] = {
            "solved": len(d["expansions"]),
            "median_expansions": statistics.median(d["expansions"]) if d["expansions"] else None,
            "median_cost": statistics.median(d["cost"]) if d["cost"] else None,
        }
    return out


def bench_backends(cfg: RunConfig, trials: int = 5, skills=("pick_place",),
                   task_id: str = "A", models=None):
    """Plan-time ratio between the learned-model and simulator backends."""
    lc = cfg.lifelong
    if models is None:
        models = {}
        for skill in skills:
            ds = ll.bootstrap_skill(skill, cfg.geometry, lc.m0, lc.p0,
                                    derive_seed(cfg.base_seed, "boot", skill), cfg.counts)
            m = init_model(skill, derive_seed(cfg.base_seed, "model", skill))
            rng = np.random.default_rng(derive_seed(cfg.base_seed, "boot-train", skill))
            train(m, ds.records, lc.bootstrap_epochs or lc.epochs, rng)
            models[skill] = m
    backends = {"sem": SemBackend(models), "ground_truth": GroundTruthBackend(cfg.geometry)}
    task = TASKS[task_id]
    out = {}
    for name, backend in backends.items():
        times = []
        for trial in range(trials):
            seed = derive_seed(cfg.base_seed, "bench-backend", trial)
            start = sample_initial_state(cfg.geometry, cfg.counts, seed)
            pcfg = preset_config(task_id, skills)
            t0 = time.monotonic()
            wastar(start, task, skills, backend, pcfg, seed=seed, geom=cfg.geometry)
            times.append(time.monotonic() - t0)
        out[name] = {"mean_plan_time_s": float(np.mean(times))}
    out["sem_over_ground_truth_ratio"] = (
        out["sem"]["mean_plan_time_s"] / max(out["ground_truth"]["mean_plan_time_s"], 1e-9))
    return out


def bench_skill_scaling(cfg: RunConfig, trials: int = 5, task_id: str = "A"):
    """Plan time as skills are added, on the ground-truth backend."""
    backend = GroundTruthBackend(cfg.geometry)
    task = TASKS[task_id]
    out = {}
    skill_sets = [SKILLS[:i] for i in range(1, len(SKILLS) + 1)]
    for skills in skill_sets:
        times = []
        for trial in range(trials):
            seed = derive_seed(cfg.base_seed, "bench-skills", trial)
            start = sample_initial_state(cfg.geometry, cfg.counts, seed)
            pcfg = preset_config(task_id, skills)
            t0 = time.monotonic()
            wastar(start, task, skills, backend, pcfg, seed=seed, geom=cfg.geometry)
            times.append(time.monotonic() - t0)
        out[",".join(skills)] = {"mean_plan_time_s": float(np.mean(times))}
    return out


def bench_data_sources(cfg: RunConfig, collection_rounds: int = 3, task_id: str = "B",
                       skills=("pick_place",), eval_trials: int = 10):
    """Planner-collected vs random transitions at matched budgets."""
    from .worldsim import apply_skill, sample_params
    lc = cfg.lifelong
    geom = cfg.geometry
    seed0 = derive_seed(cfg.base_seed, "bench-data")
    skill = skills[0]
    # shared bootstrap
    boot = ll.bootstrap_skill(skill, geom, lc.m0, lc.p0, derive_seed(seed0, "boot"), cfg.counts)

    def fresh_model(tag):
        m = init_model(skill, derive_seed(seed0, "model", tag))
        rng = np.random.default_rng(derive_seed(seed0, "train0", tag))
        train(m, boot.records, lc.bootstrap_epochs or lc.epochs, rng)
        return m

    results = {"planner": [], "random": []}
    planner_model, random_model = fresh_model("planner"), fresh_model("random")
    planner_ds = ll.SkillDataset(skill)
    random_ds = ll.SkillDataset(skill)
    for r in boot.records:
        planner_ds.insert(r)
        random_ds.insert(r)
    budgets = []
    task = TASKS[task_id]
    for rnd in range(collection_rounds):
        # planner-driven collection
        before = len(planner_ds)
        rcfg = dataclasses.replace(lc)
        rcfg.train_tasks = (task_id,)
        rcfg.base_seed = derive_seed(seed0, "collect", rnd)
        rcfg.epochs = lc.epochs
        ll.iterative_round(rnd, skills, {skill: planner_model},
                           {skill: planner_ds}, rcfg, geom)
        added = len(planner_ds) - before
        budgets.append(len(planner_ds))
        # random collection of the same budget
        rng = np.random.default_rng(derive_seed(seed0, "random", rnd))
        attempts = 0
        while len(random_ds) < len(planner_ds) and attempts < 200 * max(added, 1):
            attempts += 1
            st = sample_initial_state(geom, cfg.counts, int(rng.integers(2 ** 62)))
            for theta in sample_params(skill, st, rng, 1, geom):
                x_t, c = apply_skill(skill, st, theta, geom)
                random_ds.insert(ll.TransitionRecord(skill, st, theta, x_t, c, "random"))
        rng2 = np.random.default_rng(derive_seed(seed0, "rtrain", rnd))
        train(random_model, random_ds.records, lc.epochs, rng2)
        for name, model in (("planner", planner_model), ("random", random_model)):
            rows = evaluate([task_id], {skill: model}, skills, eval_trials,
                            derive_seed(seed0, "eval", name, rnd), cfg.counts, geom)
            results[name].append({"budget": budgets[-1] if name == "planner" else len(random_ds),
                                  "success_rate": rows[0].success_rate})
    return results


def cmd_theory(args, cfg: RunConfig):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = th.estimate_lipschitz("pick_place", pairs=200,
                                seed=derive_seed(cfg.base_seed, "lip"),
                                geom=cfg.geometry, counts=cfg.counts)
    print(f"pick_place: K_hat={est.k_dynamics:.3f} L_hat={est.l_cost:.3f}")
    report = {}
    for n in (1, 2, 3):
        seq = ("pick_place",) * n
        sb = th.check_state_bound(seq, 0.2, args.trials,
                                  derive_seed(cfg.base_seed, "state", n), est,
                                  cfg.geometry, cfg.counts)
        cb = th.check_cost_bound(seq, 0.2, args.trials,
                                 derive_seed(cfg.base_seed, "cost", n), est,
                                 cfg.geometry, cfg.counts)
        print(f"N={n}: state violations {sb.violations}/{sb.completed}, "
              f"cost violations {cb.violations}/{cb.completed}")
        report[str(n)] = {"state": json.loads(sb.to_json()), "cost": json.loads(cb.to_json())}
    (out / "theory.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0


def cmd_plot(args, cfg: RunConfig):
    schedule = sorted(cfg.lifelong.skill_schedule)
    render_curves(Path(args.csv), args.columns, Path(args.svg), marker_rounds=schedule)
    print(f"wrote {args.svg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillplan",
                                description="Search-based task planning with learned "
                                            "skill-effect models")
    p.add_argument("--config", type=str, default=None, help="path to config.json")
    p.add_argument("--out", type=str, default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("init-config", help="write a commented default config")

    b = sub.add_parser("bootstrap", help="bootstrap datasets and models")
    b.add_argument("--skills", type=lambda s: s.split(","), default=None)

    l = sub.add_parser("lifelong", help="run the lifelong experiment")
    l.add_argument("--rounds", type=int, default=None)

    pp = sub.add_parser("plan", help="plan once and print the trace")
    pp.add_argument("--task", choices=list(TASKS), required=True)
    pp.add_argument("--skills", type=lambda s: s.split(","), default=None)
    pp.add_argument("--backend", choices=["sem", "ground-truth"], default="ground-truth")

    e = sub.add_parser("eval", help="evaluate planning + execution success")
    e.add_argument("--task", choices=list(TASKS), required=True)
    e.add_argument("--skills", type=lambda s: s.split(","), default=None)
    e.add_argument("--backend", choices=["sem", "ground-truth"], default="ground-truth")
    e.add_argument("--trials", type=int, default=20)

    bn = sub.add_parser("bench", help="run benchmarks")
    bn.add_argument("--which", type=lambda s: s.split(","), default=None,
                    help="subset of backends,skills,planners,data")
    bn.add_argument("--trials", type=int, default=20)

    t = sub.add_parser("theory", help="dispersion / bound checks")
    t.add_argument("--trials", type=int, default=100)

    pt = sub.add_parser("plot", help="render metric curves to SVG")
    pt.add_argument("--csv", type=str, required=True)
    pt.add_argument("--columns", type=lambda s: s.split(","), default=["success_rate"])
    pt.add_argument("--svg", type=str, required=True)
    return p


_COMMANDS = {
    "init-config": cmd_init_config,
    "bootstrap": cmd_bootstrap,
    "lifelong": cmd_lifelong,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "theory": cmd_theory,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        if args.command == "init-config":
            args.config = args.config or "config.json"
            cfg = RunConfig()
        elif args.config:
            cfg = load_config(Path(args.config))
        else:
            cfg = RunConfig()
        if args.seed:
            cfg.base_seed = args.seed
            cfg.lifelong.base_seed = args.seed
        return _COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure contract: exit 1
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
