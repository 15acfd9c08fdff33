"""Analytic block/tray/bin world: states, geometry, skill effects and costs.

All skill effects are pure functions of (state, params). The simulator is
deterministic and serves as ground truth for data generation, execution,
and the theory harness.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

SKILLS = ("pick_place", "tray_slide", "tray_sweep", "bin_tilt")


class Region(enum.Enum):
    TABLE = "table"
    TRAY = "tray"
    BIN_NEAR = "bin_near"
    BIN_FAR = "bin_far"
    OFF_WORLD = "off_world"


class CapacityError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class BlockFeature:
    position: tuple[float, float, float]
    color: int
    index: int

    def with_position(self, pos: Sequence[float]) -> "BlockFeature":
        return replace(self, position=(float(pos[0]), float(pos[1]), float(pos[2])))


@dataclass(frozen=True)
class WorldState:
    blocks: tuple[BlockFeature, ...]

    def __post_init__(self):
        for i, b in enumerate(self.blocks):
            if b.index != i:
                raise ContractError(f"block at list position {i} has index {b.index}")

    def positions(self) -> np.ndarray:
        return np.array([b.position for b in self.blocks], dtype=np.float64)

    def to_rows(self) -> list[list[float]]:
        return [[*b.position, float(b.color), float(b.index)] for b in self.blocks]

    @staticmethod
    def from_rows(rows: Sequence[Sequence[float]]) -> "WorldState":
        return WorldState(tuple(
            BlockFeature((float(r[0]), float(r[1]), float(r[2])), int(r[3]), int(r[4]))
            for r in rows
        ))


# --- skill parameters (tagged union) ---

@dataclass(frozen=True)
class PickPlace:
    block_index: int
    place: tuple[float, float, float]

    skill = "pick_place"


@dataclass(frozen=True)
class TraySlide:
    bin_x: float

    skill = "tray_slide"


@dataclass(frozen=True)
class TraySweep:
    start_x: float

    skill = "tray_sweep"


@dataclass(frozen=True)
class BinTilt:
    angle_deg: float

    skill = "bin_tilt"


SkillParams = Union[PickPlace, TraySlide, TraySweep, BinTilt]

_PARAM_TYPES = {
    "pick_place": PickPlace,
    "tray_slide": TraySlide,
    "tray_sweep": TraySweep,
    "bin_tilt": BinTilt,
}


def params_to_dict(params: SkillParams) -> dict:
    if isinstance(params, PickPlace):
        return {"block_index": params.block_index, "place": list(params.place)}
    if isinstance(params, TraySlide):
        return {"bin_x": params.bin_x}
    if isinstance(params, TraySweep):
        return {"start_x": params.start_x}
    if isinstance(params, BinTilt):
        return {"angle_deg": params.angle_deg}
    raise ContractError(f"unknown params {params!r}")


def params_from_dict(skill: str, d: dict) -> SkillParams:
    if skill == "pick_place":
        return PickPlace(int(d["block_index"]), tuple(float(v) for v in d["place"]))
    if skill == "tray_slide":
        return TraySlide(float(d["bin_x"]))
    if skill == "tray_sweep":
        return TraySweep(float(d["start_x"]))
    if skill == "bin_tilt":
        return BinTilt(float(d["angle_deg"]))
    raise ContractError(f"unknown skill {skill!r}")


@dataclass(frozen=True)
class Geometry:
    table_x: tuple[float, float] = (0.30, 0.70)
    table_y: tuple[float, float] = (-0.45, 0.15)
    table_z: float = 0.0
    tray_x: tuple[float, float] = (0.56, 0.70)
    tray_y: tuple[float, float] = (-0.45, -0.15)
    tray_rest_z: float = 0.03
    bin_x: tuple[float, float] = (0.75, 1.15)
    bin_y: tuple[float, float] = (-0.35, 0.05)
    bin_floor_z: float = -0.10
    bin_split_x: float = 0.95
    block_edge: float = 0.04
    home: tuple[float, float, float] = (0.45, -0.15, 0.15)
    reach_limit_x: float = 0.95
    grid_rows: int = 3
    grid_cols: int = 2
    grid_pitch: float = 0.09
    grid_center: tuple[float, float] = (0.45, -0.15)
    grid_noise: float = 0.01
    bin_place_penalty: float = 0.25
    grasp_clearance: float = 0.055
    place_clearance: float = 0.05
    sweep_clearance: float = 0.03
    region_inset: float = 0.03
    land_inset: float = 0.02
    sweep_land_x: float = 0.85
    tilt_threshold_deg: float = 10.0
    tilt_shift_x: float = 0.20
    slide_fixed_cost: float = 0.1
    sweep_fixed_cost: float = 0.2
    tilt_cost_per_deg: float = 0.01
    de_overlap_pitch: float = 0.045
    handle: tuple[float, float, float] = (1.15, -0.15, 0.0)

    @property
    def table_rest_z(self) -> float:
        return self.table_z + self.block_edge / 2

    @property
    def bin_rest_z(self) -> float:
        return self.bin_floor_z + self.block_edge / 2

    @property
    def tray_center(self) -> tuple[float, float, float]:
        return (
            (self.tray_x[0] + self.tray_x[1]) / 2,
            (self.tray_y[0] + self.tray_y[1]) / 2,
            self.tray_rest_z,
        )

    def rest_z(self, region: Region) -> float:
        if region == Region.TABLE:
            return self.table_rest_z
        if region == Region.TRAY:
            return self.tray_rest_z
        if region in (Region.BIN_NEAR, Region.BIN_FAR):
            return self.bin_rest_z
        raise ContractError(f"no resting height for {region}")


DEFAULT_GEOMETRY = Geometry()


def _in_rect(x: float, y: float, xr: tuple[float, float], yr: tuple[float, float]) -> bool:
    return xr[0] <= x <= xr[1] and yr[0] <= y <= yr[1]


def region_of_xy(x: float, y: float, geom: Geometry = DEFAULT_GEOMETRY) -> Region:
    """Region of the surface underneath (x, y), ignoring height."""
    if _in_rect(x, y, geom.bin_x, geom.bin_y):
        return Region.BIN_NEAR if x < geom.bin_split_x else Region.BIN_FAR
    if _in_rect(x, y, geom.tray_x, geom.tray_y):
        return Region.TRAY
    if _in_rect(x, y, geom.table_x, geom.table_y):
        return Region.TABLE
    return Region.OFF_WORLD


def region_of(position: Sequence[float], geom: Geometry = DEFAULT_GEOMETRY) -> Region:
    x, y, z = float(position[0]), float(position[1]), float(position[2])
    surf = region_of_xy(x, y, geom)
    if surf == Region.OFF_WORLD:
        return Region.OFF_WORLD
    # height band around the surface resting height; tray sits just above
    # the table so the band boundary between them is the tray midpoint
    if surf in (Region.BIN_NEAR, Region.BIN_FAR):
        if geom.bin_floor_z - 0.02 <= z <= geom.bin_floor_z + 0.15:
            return surf
        return Region.OFF_WORLD
    tray_cut = (geom.table_rest_z + geom.tray_rest_z) / 2
    if surf == Region.TRAY:
        if tray_cut <= z <= geom.tray_rest_z + 0.12:
            return Region.TRAY
        if geom.table_z - 0.01 <= z < tray_cut:
            return Region.TABLE
        return Region.OFF_WORLD
    if geom.table_z - 0.01 <= z <= geom.table_z + 0.12:
        return Region.TABLE
    return Region.OFF_WORLD


def sample_initial_state(geom: Geometry, counts: dict[int, int], rng_seed: int) -> WorldState:
    """Blocks in random order on a grid, with small uniform xy noise."""
    n = sum(counts.values())
    capacity = geom.grid_rows * geom.grid_cols
    if n > capacity:
        raise CapacityError(f"{n} blocks exceed grid capacity {capacity}")
    rng = np.random.default_rng(rng_seed)
    cx, cy = geom.grid_center
    cells = [
        (cx + (c - (geom.grid_cols - 1) / 2) * geom.grid_pitch,
         cy + (r - (geom.grid_rows - 1) / 2) * geom.grid_pitch)
        for r in range(geom.grid_rows) for c in range(geom.grid_cols)
    ]
    cell_order = rng.permutation(len(cells))[:n]
    colors = [c for c, k in sorted(counts.items()) for _ in range(k)]
    color_order = rng.permutation(n)
    blocks = []
    for i in range(n):
        gx, gy = cells[cell_order[i]]
        nx = gx + rng.uniform(-geom.grid_noise, geom.grid_noise)
        ny = gy + rng.uniform(-geom.grid_noise, geom.grid_noise)
        blocks.append(BlockFeature((nx, ny, geom.table_rest_z), colors[color_order[i]], i))
    return WorldState(tuple(blocks))


def _xy_dist(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _check_params(skill: str, params: SkillParams) -> None:
    if not isinstance(params, _PARAM_TYPES[skill]):
        raise ContractError(f"params {type(params).__name__} do not match skill {skill}")


def precondition(skill: str, state: WorldState, params: SkillParams,
                 geom: Geometry = DEFAULT_GEOMETRY) -> bool:
    _check_params(skill, params)
    if skill == "pick_place":
        assert isinstance(params, PickPlace)
        if not (0 <= params.block_index < len(state.blocks)):
            return False
        target = state.blocks[params.block_index]
        if region_of(target.position, geom) not in (Region.TABLE, Region.TRAY):
            return False
        for b in state.blocks:
            if b.index != target.index and _xy_dist(b.position, target.position) <= geom.grasp_clearance:
                return False
        px, py = params.place[0], params.place[1]
        place_region = region_of_xy(px, py, geom)
        if place_region not in (Region.TABLE, Region.TRAY, Region.BIN_NEAR):
            return False
        if px > geom.reach_limit_x:
            return False
        for b in state.blocks:
            if b.index != target.index and _xy_dist(b.position, (px, py)) <= geom.place_clearance:
                return False
        return True
    if skill == "tray_slide":
        return any(region_of(b.position, geom) == Region.TRAY for b in state.blocks)
    if skill == "tray_sweep":
        assert isinstance(params, TraySweep)
        on_table = [b for b in state.blocks if region_of(b.position, geom) == Region.TABLE]
        swept = [b for b in on_table if b.position[0] > params.start_x]
        if not swept:
            return False
        if any(abs(b.position[0] - params.start_x) <= geom.sweep_clearance for b in on_table):
            return False
        if any(region_of(b.position, geom) == Region.TRAY for b in state.blocks):
            return False
        return True
    if skill == "bin_tilt":
        return any(region_of(b.position, geom) in (Region.BIN_NEAR, Region.BIN_FAR)
                   for b in state.blocks)
    raise ContractError(f"unknown skill {skill!r}")


# Placement-region mixture for pick-place; values renormalized by their sum.
PLACE_REGION_WEIGHTS = {Region.TABLE: 0.2, Region.BIN_NEAR: 0.5, Region.TRAY: 0.4}


def _region_box(region: Region, geom: Geometry) -> tuple[tuple[float, float], tuple[float, float]]:
    if region == Region.TABLE:
        return geom.table_x, geom.table_y
    if region == Region.TRAY:
        return geom.tray_x, geom.tray_y
    if region == Region.BIN_NEAR:
        return (geom.bin_x[0], geom.bin_split_x), geom.bin_y
    if region == Region.BIN_FAR:
        return (geom.bin_split_x, geom.bin_x[1]), geom.bin_y
    raise ContractError(f"no box for {region}")


def sample_params(skill: str, state: WorldState, rng: np.random.Generator, count: int,
                  geom: Geometry = DEFAULT_GEOMETRY) -> list[SkillParams]:
    """Rejection-sample up to `count` precondition-satisfying parameters."""
    if count <= 0:
        return []
    out: list[SkillParams] = []
    regions = list(PLACE_REGION_WEIGHTS)
    probs = np.array([PLACE_REGION_WEIGHTS[r] for r in regions])
    probs = probs / probs.sum()
    max_attempts = 50 * count
    for _ in range(max_attempts):
        if len(out) >= count:
            break
        if skill == "pick_place":
            pickable = [b.index for b in state.blocks
                        if region_of(b.position, geom) in (Region.TABLE, Region.TRAY)]
            if not pickable:
                break
            idx = int(rng.choice(pickable))
            region = regions[int(rng.choice(len(regions), p=probs))]
            (x0, x1), (y0, y1) = _region_box(region, geom)
            ins = geom.region_inset
            px = rng.uniform(x0 + ins, x1 - ins)
            py = rng.uniform(y0 + ins, y1 - ins)
            cand: SkillParams = PickPlace(idx, (px, py, geom.rest_z(region)))
        elif skill == "tray_slide":
            cand = TraySlide(rng.uniform(*geom.bin_x))
        elif skill == "tray_sweep":
            cand = TraySweep(rng.uniform(*geom.table_x))
        elif skill == "bin_tilt":
            cand = BinTilt(rng.uniform(5.0, 20.0))
        else:
            raise ContractError(f"unknown skill {skill!r}")
        if precondition(skill, state, cand, geom):
            out.append(cand)
    return out


def _norm(a: Sequence[float], b: Sequence[float]) -> float:
    return math.dist(tuple(a), tuple(b))


def _de_overlap(index: int, geom: Geometry) -> float:
    return ((index % 3) - 1) * geom.de_overlap_pitch


def apply_pick_place(state: WorldState, params: PickPlace,
                     geom: Geometry = DEFAULT_GEOMETRY) -> tuple[WorldState, float]:
    if not precondition("pick_place", state, params, geom):
        raise PreconditionError("pick_place precondition violated")
    target = state.blocks[params.block_index]
    px, py = params.place[0], params.place[1]
    region = region_of_xy(px, py, geom)
    new_pos = (px, py, geom.rest_z(region))
    blocks = tuple(b.with_position(new_pos) if b.index == target.index else b
                   for b in state.blocks)
    cost = _norm(geom.home, target.position) + _norm(target.position, new_pos)
    if region == Region.BIN_NEAR:
        cost += geom.bin_place_penalty
    return WorldState(blocks), cost


def apply_tray_slide(state: WorldState, params: TraySlide,
                     geom: Geometry = DEFAULT_GEOMETRY) -> tuple[WorldState, float]:
    if not precondition("tray_slide", state, params, geom):
        raise PreconditionError("tray_slide precondition violated")
    ins = geom.land_inset
    blocks = []
    for b in state.blocks:
        if region_of(b.position, geom) == Region.TRAY:
            lx = float(np.clip(params.bin_x + _de_overlap(b.index, geom),
                               geom.bin_x[0] + ins, geom.bin_x[1] - ins))
            ly = float(np.clip(b.position[1], geom.bin_y[0] + ins, geom.bin_y[1] - ins))
            blocks.append(b.with_position((lx, ly, geom.bin_rest_z)))
        else:
            blocks.append(b)
    tc = geom.tray_center
    slide_point = (params.bin_x, (geom.bin_y[0] + geom.bin_y[1]) / 2, geom.tray_rest_z)
    cost = _norm(geom.home, tc) + _norm(tc, slide_point) + geom.slide_fixed_cost
    return WorldState(tuple(blocks)), cost


def apply_tray_sweep(state: WorldState, params: TraySweep,
                     geom: Geometry = DEFAULT_GEOMETRY) -> tuple[WorldState, float]:
    if not precondition("tray_sweep", state, params, geom):
        raise PreconditionError("tray_sweep precondition violated")
    ins = geom.land_inset
    blocks = []
    for b in state.blocks:
        if region_of(b.position, geom) == Region.TABLE and b.position[0] > params.start_x:
            lx = float(np.clip(geom.sweep_land_x + _de_overlap(b.index, geom),
                               geom.bin_x[0] + ins, geom.bin_split_x - ins))
            ly = float(np.clip(b.position[1], geom.bin_y[0] + ins, geom.bin_y[1] - ins))
            blocks.append(b.with_position((lx, ly, geom.bin_rest_z)))
        else:
            blocks.append(b)
    tc = geom.tray_center
    start_point = (params.start_x, (geom.table_y[0] + geom.table_y[1]) / 2, geom.table_z)
    cost = (_norm(geom.home, tc) + _norm(tc, start_point)
            + (geom.table_x[1] - params.start_x) + geom.sweep_fixed_cost)
    return WorldState(tuple(blocks)), cost


def apply_bin_tilt(state: WorldState, params: BinTilt,
                   geom: Geometry = DEFAULT_GEOMETRY) -> tuple[WorldState, float]:
    if not precondition("bin_tilt", state, params, geom):
        raise PreconditionError("bin_tilt precondition violated")
    blocks = list(state.blocks)
    if params.angle_deg >= geom.tilt_threshold_deg:
        ins = geom.land_inset
        for i, b in enumerate(blocks):
            if region_of(b.position, geom) == Region.BIN_NEAR:
                nx = float(np.clip(b.position[0] + geom.tilt_shift_x,
                                   geom.bin_split_x + ins, geom.bin_x[1] - ins))
                blocks[i] = b.with_position((nx, b.position[1], b.position[2]))
    cost = 2 * _norm(geom.home, geom.handle) + geom.tilt_cost_per_deg * params.angle_deg
    return WorldState(tuple(blocks)), cost


_APPLY = {
    "pick_place": apply_pick_place,
    "tray_slide": apply_tray_slide,
    "tray_sweep": apply_tray_sweep,
    "bin_tilt": apply_bin_tilt,
}


def apply_skill(skill: str, state: WorldState, params: SkillParams,
                geom: Geometry = DEFAULT_GEOMETRY) -> tuple[WorldState, float]:
    _check_params(skill, params)
    return _APPLY[skill](state, params, geom)


# --- plans and open-loop execution ---

@dataclass(frozen=True)
class PlanStep:
    skill: str
    params: SkillParams
    predicted_state: WorldState
    predicted_cost: float


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]

    @property
    def total_cost(self) -> float:
        return sum(s.predicted_cost for s in self.steps)


class FailureReason(enum.Enum):
    PRECONDITION_VIOLATED = "precondition_violated"
    GOAL_NOT_REACHED = "goal_not_reached"


@dataclass(frozen=True)
class ExecutionResult:
    success: bool
    executed_cost: float
    final_state: WorldState
    failure_step: Optional[int] = None
    failure_reason: Optional[FailureReason] = None


def execute_plan(start: WorldState, plan: Plan, goal_fn,
                 geom: Geometry = DEFAULT_GEOMETRY) -> ExecutionResult:
    """Open-loop execution: re-checks preconditions on the true state."""
    state = start
    cost = 0.0
    for i, step in enumerate(plan.steps):
        if not precondition(step.skill, state, step.params, geom):
            return ExecutionResult(False, cost, state, i, FailureReason.PRECONDITION_VIOLATED)
        state, c = apply_skill(step.skill, state, step.params, geom)
        cost += c
    if goal_fn(state):
        return ExecutionResult(True, cost, state)
    return ExecutionResult(False, cost, state, None, FailureReason.GOAL_NOT_REACHED)


class GroundTruthBackend:
    """Effect backend that answers with the analytic simulator."""

    def __init__(self, geom: Geometry = DEFAULT_GEOMETRY):
        self.geom = geom

    def predict(self, skill: str, state: WorldState, params: SkillParams):
        return apply_skill(skill, state, params, self.geom)
