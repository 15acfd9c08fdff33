"""Sweep cost constants and inflation factors; report tractability and
route-cost ratios per task/skill-set. Dev tool used to pick the shipped
geometry constants and epsilon presets."""
import itertools

from skillplan import worldsim as w, planner as pl

CASES = [
    ("A", ("pick_place",)),
    ("B", ("pick_place",)),
    ("A", ("pick_place", "tray_slide")),
    ("B", ("pick_place", "tray_slide")),
    ("C", ("pick_place", "tray_slide")),
    ("A", ("pick_place", "tray_slide", "tray_sweep")),
]

def run(geom, task, skills, eps, seed, max_exp=1200):
    backend = w.GroundTruthBackend(geom)
    start = w.sample_initial_state(geom, {0: 3, 1: 3}, seed)
    depth = 8 if task in "AC" else 5
    cfg = pl.PlannerConfig(epsilon=eps, max_depth=depth, max_expansions=max_exp,
                           timeout_s=30)
    res = pl.wastar(start, pl.TASKS[task], skills, backend, cfg, seed=seed)
    return res

for home_z, pen in itertools.product((0.15, 0.30), (0.15, 0.30)):
    geom = w.Geometry(home=(0.45, -0.15, home_z), bin_place_penalty=pen,
                      slide_fixed_cost=0.1)
    print(f"=== home_z={home_z} pen={pen}")
    for task, skills in CASES:
        for eps in (3, 5, 8, 20):
            exps, costs = [], []
            for seed in (7, 23):
                r = run(geom, task, skills, eps, seed)
                exps.append(r.expansions if r.plan else -1)
                costs.append(round(r.plan.total_cost, 2) if r.plan else None)
            print(f"  {task} {'+'.join(s[0:7] for s in skills):28s} eps={eps:2d} "
                  f"exp={exps} cost={costs}")
