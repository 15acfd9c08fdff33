"""Empirical validation of the sampling-completeness and cost bounds.

Lipschitz constants and dispersion are estimated from samples (lower
bounds) and inflated before use; the checks tolerate a small violation
rate since estimates remain estimates. Skills with effect discontinuities
(bin tilt's friction threshold, pick-place's region-dependent cost) are
restricted to a continuous slice of their domains.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .worldsim import (
    DEFAULT_GEOMETRY, BinTilt, Geometry, PickPlace, Region, SkillParams, TraySlide,
    TraySweep, WorldState, apply_skill, precondition, region_of, sample_initial_state,
)
from .lifelong import _augmented_initial_state, derive_seed

DEFAULT_INFLATION = 1.2


class DomainError(ValueError):
    pass


def kappa(k: float, n: int) -> float:
    """Geometric-sum error propagation constant over an n-step plan."""
    if k <= 0:
        raise DomainError("k must be positive")
    if n < 1:
        raise DomainError("n must be >= 1")
    if abs(k - 1.0) < 1e-12:
        return float(n)
    return k * (k ** n - 1) / (k - 1)


@dataclass
class DispersionEstimate:
    value: float
    probe_count: int
    bounds: list[tuple[float, float]]


def estimate_dispersion(samples: np.ndarray, bounds, probes: int,
                        rng: np.random.Generator) -> DispersionEstimate:
    """Finite-probe lower bound of the largest empty ball radius."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise DomainError("samples must be non-empty")
    bounds = [tuple(map(float, b)) for b in bounds]
    d = len(bounds)
    if samples.shape[1] != d:
        raise DomainError("sample dimension does not match bounds")
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    pts = rng.uniform(lo, hi, size=(probes, d))
    corners = np.array(list(itertools.product(*bounds)))
    probe_pts = np.vstack([pts, corners])
    dists = np.sqrt(((probe_pts[:, None, :] - samples[None, :, :]) ** 2).sum(-1))
    value = float(dists.min(axis=1).max())
    return DispersionEstimate(value, len(probe_pts), bounds)


# --- restricted continuous parameter domains per skill ---

@dataclass
class ThetaDomain:
    bounds: list[tuple[float, float]]
    make: Callable[[np.ndarray], SkillParams]

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, SkillParams]:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        v = rng.uniform(lo, hi)
        return v, self.make(v)


def theta_domain(skill: str, geom: Geometry, pick_index: int = 0) -> ThetaDomain:
    if skill == "pick_place":
        # placements restricted to the table interior: keeps both the effect
        # map and the cost free of the bin-penalty discontinuity
        ins = geom.region_inset
        bounds = [(geom.table_x[0] + ins, geom.table_x[1] - ins),
                  (geom.table_y[0] + ins, geom.table_y[1] - ins)]
        return ThetaDomain(bounds, lambda v: PickPlace(
            pick_index, (float(v[0]), float(v[1]), geom.table_rest_z)))
    if skill == "tray_slide":
        return ThetaDomain([geom.bin_x], lambda v: TraySlide(float(v[0])))
    if skill == "tray_sweep":
        return ThetaDomain([geom.table_x], lambda v: TraySweep(float(v[0])))
    if skill == "bin_tilt":
        # single side of the friction threshold
        return ThetaDomain([(geom.tilt_threshold_deg + 0.01, 20.0)],
                           lambda v: BinTilt(float(v[0])))
    raise DomainError(f"unknown skill {skill!r}")


@dataclass
class LipschitzEstimate:
    k_dynamics: float
    l_cost: float
    pair_count: int
    inflation: float = DEFAULT_INFLATION


def _flat(state: WorldState, theta_vec: np.ndarray) -> np.ndarray:
    return np.concatenate([state.positions().ravel(), theta_vec])


def _sample_valid(skill: str, geom: Geometry, rng: np.random.Generator,
                  counts: dict[int, int], attempts: int = 200):
    """One precondition-satisfying (state, theta_vec, params) from the
    restricted domain, or None."""
    for _ in range(attempts):
        seed = int(rng.integers(2 ** 62))
        state = _augmented_initial_state(skill, geom, counts, seed)
        pick_index = int(rng.integers(len(state.blocks)))
        dom = theta_domain(skill, geom, pick_index)
        vec, params = dom.sample(rng)
        if precondition(skill, state, params, geom):
            return state, vec, params
    return None


def estimate_lipschitz(skill: str, pairs: int, seed: int,
                       geom: Geometry = DEFAULT_GEOMETRY,
                       counts: Optional[dict[int, int]] = None,
                       inflation: float = DEFAULT_INFLATION) -> LipschitzEstimate:
    """Max observed slope of the ground-truth effect and cost maps over
    random valid (state, theta) pairs."""
    if pairs < 1:
        raise DomainError("pairs must be >= 1")
    counts = counts or {0: 3, 1: 3}
    rng = np.random.default_rng(seed)
    k_hat = 0.0
    l_hat = 0.0
    found = 0
    for _ in range(pairs):
        a = _sample_valid(skill, geom, rng, counts)
        b = _sample_valid(skill, geom, rng, counts)
        if a is None or b is None:
            continue
        sa, va, pa = a
        sb, vb, pb = b
        if skill == "pick_place" and pa.block_index != pb.block_index:
            # effect is discontinuous across the discrete index; restrict
            # pairs to the continuous same-index slice
            pb = PickPlace(pa.block_index, pb.place)
            if not precondition(skill, sb, pb, geom):
                continue
        xa, ca = apply_skill(skill, sa, pa, geom)
        xb, cb = apply_skill(skill, sb, pb, geom)
        denom = float(np.linalg.norm(_flat(sa, va) - _flat(sb, vb)))
        if denom < 1e-9:
            continue
        found += 1
        k_hat = max(k_hat, float(np.linalg.norm(xa.positions() - xb.positions())) / denom)
        l_hat = max(l_hat, abs(ca - cb) / denom)
    if found == 0:
        raise DomainError(f"no valid pairs found for {skill}")
    return LipschitzEstimate(k_hat, l_hat, found, inflation)


@dataclass
class BoundCheckReport:
    trials: int
    completed: int
    skipped: int
    violations: int
    details: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "trials": self.trials, "completed": self.completed,
            "skipped": self.skipped, "violations": self.violations,
            "details": self.details,
        })


def _build_trial(skill_seq, geom, counts, rng, branching, probes,
                 delta_target=math.inf, max_branching=12):
    """Reference path plus a same-sequence sampled tree rooted at the start.

    Returns (ref_states, ref_cost, leaves, delta_hat) or None when the trial
    cannot be completed. Leaves carry (state, accumulated cost).
    """
    seed = int(rng.integers(2 ** 62))
    start = _augmented_initial_state(skill_seq[0], geom, counts, seed)
    # reference path with random valid params
    ref_states = [start]
    ref_params = []
    ref_cost = 0.0
    state = start
    for skill in skill_seq:
        picked = None
        for _ in range(200):
            idx = int(rng.integers(len(state.blocks)))
            dom = theta_domain(skill, geom, idx)
            vec, params = dom.sample(rng)
            if precondition(skill, state, params, geom):
                picked = (idx, vec, params, dom)
                break
        if picked is None:
            return None
        idx, vec, params, dom = picked
        state, c = apply_skill(skill, state, params, geom)
        ref_states.append(state)
        ref_params.append((skill, idx, dom))
        ref_cost += c
    # sampled tree restricted to the same skill (and pick index) sequence
    level = [(start, 0.0)]
    delta_hat = 0.0
    for (skill, idx, _) in ref_params:
        nxt = []
        for node_state, node_cost in level:
            dom = theta_domain(skill, geom, idx)
            vecs = []
            attempts = 0
            node_delta = math.inf
            # densify up to the cap until the measured dispersion meets the target
            while attempts < 50 * max_branching and len(vecs) < max_branching:
                attempts += 1
                vec, params = dom.sample(rng)
                if not precondition(skill, node_state, params, geom):
                    continue
                vecs.append(vec)
                s2, c2 = apply_skill(skill, node_state, params, geom)
                nxt.append((s2, node_cost + c2))
                if len(vecs) >= branching:
                    est = estimate_dispersion(np.array(vecs), dom.bounds, probes, rng)
                    node_delta = est.value
                    if node_delta <= delta_target:
                        break
            if vecs:
                if not math.isfinite(node_delta):
                    node_delta = estimate_dispersion(
                        np.array(vecs), dom.bounds, probes, rng).value
                delta_hat = max(delta_hat, node_delta)
        if not nxt:
            return None
        level = nxt
    return ref_states, ref_cost, level, delta_hat


def check_state_bound(skill_seq: tuple[str, ...], delta_target: float, trials: int,
                      seed: int, k_est: LipschitzEstimate,
                      geom: Geometry = DEFAULT_GEOMETRY,
                      counts: Optional[dict[int, int]] = None,
                      branching: int = 6, probes: int = 200) -> BoundCheckReport:
    """Per trial: does some same-sequence sampled path end within
    2 * kappa(K, N) * dispersion of the reference terminal state?"""
    counts = counts or {0: 3, 1: 3}
    rng = np.random.default_rng(seed)
    n = len(skill_seq)
    k_infl = max(k_est.k_dynamics * k_est.inflation, 1e-9)
    report = BoundCheckReport(trials, 0, 0, 0)
    for _ in range(trials):
        built = _build_trial(skill_seq, geom, counts, rng, branching, probes,
                             delta_target=delta_target)
        if built is None:
            report.skipped += 1
            continue
        ref_states, _, leaves, delta_hat = built
        target = ref_states[-1].positions()
        dev = min(float(np.linalg.norm(s.positions() - target)) for s, _ in leaves)
        bound = 2 * kappa(k_infl, n) * delta_hat
        report.completed += 1
        if dev > bound and delta_hat > 0:
            report.violations += 1
        report.details.append({"deviation": dev, "bound": bound, "delta": delta_hat})
    return report


def check_cost_bound(skill_seq: tuple[str, ...], delta_target: float, trials: int,
                     seed: int, k_est: LipschitzEstimate,
                     geom: Geometry = DEFAULT_GEOMETRY,
                     counts: Optional[dict[int, int]] = None,
                     branching: int = 6, probes: int = 200) -> BoundCheckReport:
    """Per trial: is the deviation-minimizing same-sequence path's cost within
    delta * N * L * (1 + 2 * sum kappa_i) of the reference path's cost?"""
    counts = counts or {0: 3, 1: 3}
    rng = np.random.default_rng(seed)
    n = len(skill_seq)
    k_infl = max(k_est.k_dynamics * k_est.inflation, 1e-9)
    l_infl = k_est.l_cost * k_est.inflation
    report = BoundCheckReport(trials, 0, 0, 0)
    for _ in range(trials):
        built = _build_trial(skill_seq, geom, counts, rng, branching, probes,
                             delta_target=delta_target)
        if built is None:
            report.skipped += 1
            continue
        ref_states, ref_cost, leaves, delta_hat = built
        target = ref_states[-1].positions()
        best = min(leaves, key=lambda sc: float(np.linalg.norm(sc[0].positions() - target)))
        margin = delta_hat * n * l_infl * (1 + 2 * sum(kappa(k_infl, i) for i in range(1, n + 1)))
        bound = ref_cost + margin
        report.completed += 1
        if best[1] > bound and delta_hat > 0:
            report.violations += 1
        report.details.append({"graph_cost": best[1], "bound": bound,
                               "ref_cost": ref_cost, "delta": delta_hat})
    return report
