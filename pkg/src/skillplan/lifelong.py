"""Iterative plan-collect-train loop, datasets, and evaluation metrics."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import sem as sem_mod
from .planner import (
    PlannerConfig, SearchResult, TASKS, TaskSpec, extract_weighted_paths, goal_satisfied,
    preset_config, wastar,
)
from .neural import AdamState
from .sem import SemBackend, SemModel, init_model, train
from .worldsim import (
    DEFAULT_GEOMETRY, BlockFeature, Geometry, Plan, Region, SkillParams, WorldState,
    apply_skill, execute_plan, params_from_dict, params_to_dict, precondition,
    region_of, sample_initial_state, sample_params,
)

WEIGHTED_COST_SENTINEL = -1.0  # recorded when success rate is zero


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary labelled parts."""
    h = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class TransitionRecord:
    skill: str
    x0: WorldState
    theta: SkillParams
    xT: WorldState
    cost: float
    provenance: str = "bootstrap"

    def __post_init__(self):
        if self.cost <= 0:
            raise ValueError("transition cost must be positive")
        if len(self.x0.blocks) != len(self.xT.blocks):
            raise ValueError("block count changed across transition")


def _quant(v: float, q: float) -> int:
    return round(v / q)


def record_key(rec: TransitionRecord, pos_q: float = 0.001, ang_q: float = 0.1):
    def state_key(s: WorldState):
        return tuple(tuple(_quant(p, pos_q) for p in b.position) for b in s.blocks)

    theta = params_to_dict(rec.theta)
    theta_key = []
    for k, v in sorted(theta.items()):
        if k == "angle_deg":
            theta_key.append((k, _quant(v, ang_q)))
        elif isinstance(v, list):
            theta_key.append((k, tuple(_quant(x, pos_q) for x in v)))
        elif isinstance(v, float):
            theta_key.append((k, _quant(v, pos_q)))
        else:
            theta_key.append((k, v))
    return (rec.skill, state_key(rec.x0), state_key(rec.xT), tuple(theta_key))


@dataclass
class SkillDataset:
    skill: str
    records: list[TransitionRecord] = field(default_factory=list)
    _keys: set = field(default_factory=set)

    def insert(self, rec: TransitionRecord) -> bool:
        key = record_key(rec)
        if key in self._keys:
            return False
        self._keys.add(key)
        self.records.append(rec)
        return True

    def __len__(self):
        return len(self.records)

    def save_jsonl(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            for r in self.records:
                f.write(json.dumps({
                    "skill": r.skill,
                    "x0": r.x0.to_rows(),
                    "theta": params_to_dict(r.theta),
                    "xT": r.xT.to_rows(),
                    "cost": r.cost,
                    "provenance": r.provenance,
                }) + "\n")

    @staticmethod
    def load_jsonl(path: Path) -> "SkillDataset":
        ds: Optional[SkillDataset] = None
        with Path(path).open() as f:
            for line in f:
                d = json.loads(line)
                if ds is None:
                    ds = SkillDataset(d["skill"])
                ds.insert(TransitionRecord(
                    d["skill"], WorldState.from_rows(d["x0"]),
                    params_from_dict(d["skill"], d["theta"]),
                    WorldState.from_rows(d["xT"]), d["cost"], d.get("provenance", "bootstrap"),
                ))
        if ds is None:
            raise ValueError(f"empty dataset file {path}")
        return ds


def dedup_insert(dataset: SkillDataset, rec: TransitionRecord) -> bool:
    return dataset.insert(rec)


@dataclass
class LifelongConfig:
    m0: int = 200          # bootstrap initial states
    p0: int = 5            # bootstrap params per state
    mp: int = 10           # initial states per train task per round
    max_depth: int = 8
    max_expansions: int = 2000
    timeout_s: float = 60.0
    n_list: int = 20
    n_sample: int = 5
    epochs: int = 300
    rounds: int = 40
    skill_schedule: dict[int, list[str]] = field(default_factory=lambda: {
        0: ["pick_place"], 10: ["tray_slide"], 20: ["tray_sweep"], 30: ["bin_tilt"],
    })
    eval_trials: int = 20
    base_seed: int = 0
    counts: dict[int, int] = field(default_factory=lambda: {0: 3, 1: 3})
    train_tasks: tuple[str, ...] = ("A", "B")
    test_tasks: tuple[str, ...] = ("C", "D")
    bootstrap_epochs: Optional[int] = None  # defaults to epochs
    fine_tune_lr: float = 0.001

    def __post_init__(self):
        if self.n_sample > self.n_list:
            raise ValueError("n_sample must be <= n_list")
        for r in self.skill_schedule:
            if not (0 <= r < max(self.rounds, 1)):
                raise ValueError(f"schedule round {r} out of range")


def _augmented_initial_state(skill: str, geom: Geometry, counts: dict[int, int],
                             seed: int) -> WorldState:
    """Bootstrap state sampler.

    Tray-slide and bin-tilt preconditions never hold on the raw initial
    distribution, so blocks are teleported into the relevant fixture with
    some probability before parameters are sampled. On top of that, every
    skill executes from mid-plan states where earlier steps already dropped
    blocks into the bin, so each skill's bootstrap mixes in bin-resident
    blocks too — the model has to learn those stay put.
    """
    state = sample_initial_state(geom, counts, seed)
    rng = np.random.default_rng(derive_seed("augment", skill, seed))
    p_tray = 0.35 if skill == "tray_slide" else 0.0
    p_bin = 0.5 if skill == "bin_tilt" else 0.25
    blocks = []
    for b in state.blocks:
        u = rng.uniform()
        if u < p_tray:
            # sample both sides of the tray boundary, not just the interior:
            # planners exploit a smoothed membership edge by parking blocks
            # just outside the tray and banking on a predicted free ride
            x = rng.uniform(max(geom.tray_x[0] - 0.05, geom.table_x[0] + 0.01),
                            geom.tray_x[1] - 0.02)
            y = rng.uniform(geom.tray_y[0] + 0.02,
                            min(geom.tray_y[1] + 0.08, geom.table_y[1] - 0.01))
            inside = (geom.tray_x[0] <= x <= geom.tray_x[1]
                      and geom.tray_y[0] <= y <= geom.tray_y[1])
            z = geom.tray_rest_z if inside else geom.table_rest_z
            blocks.append(b.with_position((x, y, z)))
        elif u < p_tray + p_bin:
            x = rng.uniform(geom.bin_x[0] + 0.02, geom.bin_x[1] - 0.02)
            y = rng.uniform(geom.bin_y[0] + 0.02, geom.bin_y[1] - 0.02)
            blocks.append(b.with_position((x, y, geom.bin_rest_z)))
        else:
            blocks.append(b)
    return WorldState(tuple(blocks))


def bootstrap_skill(skill: str, geom: Geometry, m0: int, p0: int, seed: int,
                    counts: Optional[dict[int, int]] = None) -> SkillDataset:
    """Seed a skill's dataset by simulating sampled parameters."""
    counts = counts or {0: 3, 1: 3}
    ds = SkillDataset(skill)
    for i in range(m0):
        state_seed = derive_seed("bootstrap", skill, seed, i)
        state = _augmented_initial_state(skill, geom, counts, state_seed)
        rng = np.random.default_rng(derive_seed("bootstrap-params", skill, seed, i))
        for theta in sample_params(skill, state, rng, p0, geom):
            x_t, cost = apply_skill(skill, state, theta, geom)
            ds.insert(TransitionRecord(skill, state, theta, x_t, cost, "bootstrap"))
    if not ds.records:
        warnings.warn(f"bootstrap for {skill} produced an empty dataset")
    return ds


def collect_from_plan(plan: Plan, start: WorldState, provenance: str,
                      datasets: dict[str, SkillDataset],
                      geom: Geometry = DEFAULT_GEOMETRY) -> int:
    """Ground-truth-simulate a sampled path, truncating at the first
    precondition violation; store the executed prefix's transitions."""
    state = start
    inserted = 0
    for step in plan.steps:
        if not precondition(step.skill, state, step.params, geom):
            break
        x_t, cost = apply_skill(step.skill, state, step.params, geom)
        rec = TransitionRecord(step.skill, state, step.params, x_t, cost, provenance)
        if datasets[step.skill].insert(rec):
            inserted += 1
        state = x_t
    return inserted


@dataclass
class RoundReport:
    round_index: int
    transitions_added: dict[str, int]
    plans_attempted: int
    plans_solved: int
    train_losses: dict[str, float]


def _planner_cfg_for(task_id: str, skills: tuple[str, ...], cfg: LifelongConfig) -> PlannerConfig:
    return preset_config(task_id, skills,
                         max_depth=min_depth(task_id, cfg.max_depth),
                         max_expansions=cfg.max_expansions,
                         timeout_s=cfg.timeout_s)


def min_depth(task_id: str, cap: int) -> int:
    preset = 8 if task_id in ("A", "C") else 5
    return min(preset, cap)


def iterative_round(round_index: int, enabled_skills: tuple[str, ...],
                    models: dict[str, SemModel], datasets: dict[str, SkillDataset],
                    cfg: LifelongConfig, geom: Geometry = DEFAULT_GEOMETRY) -> RoundReport:
    """One round of Algorithm-style data collection plus model fine-tuning."""
    backend = SemBackend(models)
    new_skills = frozenset(cfg.skill_schedule.get(round_index, []))
    before = {s: len(datasets[s]) for s in enabled_skills}
    attempted = solved = 0
    for task_id in cfg.train_tasks:
        task = TASKS[task_id]
        pcfg = _planner_cfg_for(task_id, enabled_skills, cfg)
        for trial in range(cfg.mp):
            seed = derive_seed(cfg.base_seed, "round", round_index, task_id, trial)
            start = sample_initial_state(geom, cfg.counts, seed)
            result = wastar(start, task, enabled_skills, backend, pcfg, seed=seed, geom=geom)
            attempted += 1
            if result.plan is not None:
                solved += 1
            rng = np.random.default_rng(derive_seed(seed, "paths"))
            provenance = f"planner:task{task_id}:round{round_index}"
            for plan in extract_weighted_paths(result, new_skills, cfg.n_list, cfg.n_sample, rng):
                collect_from_plan(plan, start, provenance, datasets, geom)
    added = {s: len(datasets[s]) - before[s] for s in enabled_skills}
    # train every enabled skill on its updated dataset
    losses = {}
    for skill in enabled_skills:
        ds = datasets[skill]
        if not ds.records:
            continue
        rng = np.random.default_rng(derive_seed(cfg.base_seed, "train", round_index, skill))
        # fresh optimizer at a reduced rate for round fine-tunes: reusing the
        # converged optimizer's tiny second moments (or keeping the full
        # from-scratch rate) reliably knocks the model into a constant-output
        # basin when the collected data shifts the input distribution
        models[skill].adam = AdamState(lr=cfg.fine_tune_lr)
        hist = train(models[skill], ds.records, cfg.epochs, rng)
        losses[skill] = hist[-1]
    return RoundReport(round_index, added, attempted, solved, losses)


@dataclass
class EvalRow:
    round_index: int
    task: str
    n_skills: int
    success_rate: float
    mean_cost: float
    weighted_cost: float
    plan_time_ms: float
    expansions: float
    new_skill_plan_rate: float


def evaluate(task_ids, models: dict[str, SemModel], skills: tuple[str, ...],
             n_trials: int, seed: int, counts: Optional[dict[int, int]] = None,
             geom: Geometry = DEFAULT_GEOMETRY, round_index: int = -1,
             new_skills: frozenset[str] = frozenset(),
             backend=None) -> list[EvalRow]:
    """Plan once per trial with frozen models, execute open loop on ground truth."""
    counts = counts or {0: 3, 1: 3}
    backend = backend if backend is not None else SemBackend(models)
    rows = []
    for task_id in task_ids:
        task = TASKS[task_id]
        pcfg = preset_config(task_id, skills)
        successes, costs, times, exps, new_uses = 0, [], [], [], 0
        for trial in range(n_trials):
            tseed = derive_seed(seed, "eval", round_index, task_id, trial)
            start = sample_initial_state(geom, counts, tseed)
            result = wastar(start, task, skills, backend, pcfg, seed=tseed, geom=geom)
            times.append(result.elapsed_s * 1000)
            exps.append(result.expansions)
            if result.plan is None:
                continue
            if any(s.skill in new_skills for s in result.plan.steps):
                new_uses += 1
            ex = execute_plan(start, result.plan,
                              lambda s: goal_satisfied(s, task, geom), geom)
            if ex.success:
                successes += 1
                costs.append(ex.executed_cost)
        rate = successes / n_trials
        mean_cost = float(np.mean(costs)) if costs else float("nan")
        weighted = mean_cost / rate if rate > 0 else WEIGHTED_COST_SENTINEL
        rows.append(EvalRow(round_index, task_id, len(skills), rate, mean_cost,
                            weighted, float(np.mean(times)), float(np.mean(exps)),
                            new_uses / n_trials))
    return rows


def run_lifelong(cfg: LifelongConfig, out_dir: Optional[Path] = None,
                 geom: Geometry = DEFAULT_GEOMETRY,
                 on_round=None) -> list[EvalRow]:
    """Full lifelong experiment: add skills on schedule, collect, train, evaluate."""
    models: dict[str, SemModel] = {}
    datasets: dict[str, SkillDataset] = {}
    enabled: list[str] = []
    all_rows: list[EvalRow] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    bootstrap_epochs = cfg.bootstrap_epochs or cfg.epochs
    for rnd in range(cfg.rounds):
        newly = cfg.skill_schedule.get(rnd, [])
        for skill in newly:
            enabled.append(skill)
            seed = derive_seed(cfg.base_seed, "model", skill)
            models[skill] = init_model(skill, seed)
            datasets[skill] = bootstrap_skill(
                skill, geom, cfg.m0, cfg.p0, derive_seed(cfg.base_seed, "boot", skill),
                cfg.counts)
            if datasets[skill].records:
                rng = np.random.default_rng(derive_seed(cfg.base_seed, "boot-train", skill))
                train(models[skill], datasets[skill].records, bootstrap_epochs, rng)
        skills = tuple(enabled)
        report = iterative_round(rnd, skills, models, datasets, cfg, geom)
        rows = evaluate(tuple(cfg.train_tasks) + tuple(cfg.test_tasks), models, skills,
                        cfg.eval_trials, cfg.base_seed, cfg.counts, geom,
                        round_index=rnd, new_skills=frozenset(newly))
        all_rows.extend(rows)
        if out_dir is not None:
            for skill in skills:
                datasets[skill].save_jsonl(out_dir / "datasets" / f"{skill}.jsonl")
                sem_mod.save_checkpoint(models[skill], out_dir / "models" / f"{skill}.json")
        if on_round is not None:
            on_round(rnd, report, rows, models, datasets)
    return all_rows
