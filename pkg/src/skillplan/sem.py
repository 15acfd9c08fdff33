"""Per-skill GNN skill-effect models.

One model per skill predicts the per-block feature change and the skill
execution cost from the current state and the skill parameters. Message
passing runs one round over the complete directed graph with mean
aggregation, so predictions are permutation-equivariant and the same model
handles any block count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import neural
from .neural import AdamState, Mlp, Tensor, TrainingError, concat, init_mlp, segment_sum, slice_cols
from .worldsim import (
    BlockFeature, PickPlace, SkillParams, WorldState, params_from_dict, params_to_dict,
)

S_DIM = 7  # [x, y, z, color, color+1, index, index+1]
THETA_DIMS = {"pick_place": 5, "tray_slide": 1, "tray_sweep": 1, "bin_tilt": 1}

EMBED_DIM = 32
MSG_DIM = 128
GRAPH_FEAT_DIM = 32

LAMBDA_STATE = 100.0
LAMBDA_COST = 1.0

CHECKPOINT_SCHEMA = 1


class ContractError(ValueError):
    pass


def node_features(state: WorldState) -> np.ndarray:
    """Per-block feature rows [pos(3), color enc(2), index enc(2)]."""
    rows = np.empty((len(state.blocks), S_DIM))
    for i, b in enumerate(state.blocks):
        rows[i] = [*b.position, b.color, b.color + 1, b.index, b.index + 1]
    return rows


def encode_theta(skill: str, params: SkillParams) -> np.ndarray:
    if skill == "pick_place":
        assert isinstance(params, PickPlace)
        return np.array([params.block_index, params.block_index + 1, *params.place])
    d = params_to_dict(params)
    (value,) = d.values()
    return np.array([float(value)])


def encode_input(state: WorldState, params: SkillParams, skill: str) -> np.ndarray:
    """Graph input: node feature rows with the theta encoding appended to all."""
    from .worldsim import _PARAM_TYPES
    if not isinstance(params, _PARAM_TYPES[skill]):
        raise ContractError(f"params {type(params).__name__} do not match skill {skill}")
    feats = node_features(state)
    theta = encode_theta(skill, params)
    return np.hstack([feats, np.tile(theta, (feats.shape[0], 1))])


@dataclass
class SemPrediction:
    delta: np.ndarray  # [K, S]
    cost: float


@dataclass
class SemModel:
    skill: str
    node_embed: Mlp
    message: Mlp
    node_pred: Mlp
    graph_pred: Mlp
    adam: AdamState = field(default_factory=AdamState)
    meta: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return (self.node_embed.parameters() + self.message.parameters()
                + self.node_pred.parameters() + self.graph_pred.parameters())


def init_model(skill: str, seed: int) -> SemModel:
    rng = np.random.default_rng(seed)
    in_dim = S_DIM + THETA_DIMS[skill]
    return SemModel(
        skill=skill,
        node_embed=init_mlp(in_dim, [32, 32], rng),
        message=init_mlp(2 * EMBED_DIM, [128, 128, 128], rng),
        node_pred=init_mlp(EMBED_DIM + MSG_DIM, [64, S_DIM + GRAPH_FEAT_DIM], rng,
                           out_scale=0.01),
        graph_pred=init_mlp(GRAPH_FEAT_DIM, [32, 1], rng, out_scale=0.01),
        meta={"seed": seed, "rounds_trained": 0, "dataset_size": 0},
    )


_PAIR_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _pair_indices(n_graphs: int, k: int):
    """Sender/receiver global node indices for stacked complete graphs."""
    key = (n_graphs, k)
    if key not in _PAIR_CACHE:
        send, recv = [], []
        for g in range(n_graphs):
            base = g * k
            for r in range(k):
                for s in range(k):
                    if s != r:
                        send.append(base + s)
                        recv.append(base + r)
        graph_ids = np.repeat(np.arange(n_graphs), k)
        _PAIR_CACHE[key] = (np.array(send, dtype=np.intp),
                            np.array(recv, dtype=np.intp), graph_ids)
    return _PAIR_CACHE[key]


def _forward_batch(model: SemModel, feats: Tensor, n_graphs: int, k: int):
    """Stacked forward pass over n_graphs graphs of k nodes each.

    Returns (delta [n*k, S], cost [n_graphs, 1]) tensors.
    """
    send, recv, graph_ids = _pair_indices(n_graphs, k)
    h = model.node_embed(feats)
    if k > 1:
        pair = concat([h.gather(send), h.gather(recv)])
        msgs = model.message(pair)
        m = segment_sum(msgs, recv, n_graphs * k) * (1.0 / (k - 1))
    else:
        m = Tensor(np.zeros((n_graphs, MSG_DIM)))
    p = model.node_pred(concat([h, m]))
    delta = slice_cols(p, 0, S_DIM)
    graph_in = segment_sum(slice_cols(p, S_DIM, S_DIM + GRAPH_FEAT_DIM), graph_ids, n_graphs)
    cost = model.graph_pred(graph_in)
    return delta, cost


def _forward_batch_np(model: SemModel, feats: np.ndarray, n_graphs: int, k: int):
    send, recv, graph_ids = _pair_indices(n_graphs, k)
    h = model.node_embed.forward_np(feats)
    if k > 1:
        pair = np.hstack([h[send], h[recv]])
        msgs = model.message.forward_np(pair)
        m = np.zeros((n_graphs * k, MSG_DIM))
        np.add.at(m, recv, msgs)
        m /= (k - 1)
    else:
        m = np.zeros((n_graphs, MSG_DIM))
    p = model.node_pred.forward_np(np.hstack([h, m]))
    delta = p[:, :S_DIM]
    graph_in = np.zeros((n_graphs, GRAPH_FEAT_DIM))
    np.add.at(graph_in, graph_ids, p[:, S_DIM:])
    cost = model.graph_pred.forward_np(graph_in)
    return delta, cost


def sem_forward(model: SemModel, graph_input: np.ndarray) -> SemPrediction:
    """Single-graph prediction (inference fast path)."""
    k = graph_input.shape[0]
    if k < 1:
        raise ContractError("graph input needs at least one node")
    delta, cost = _forward_batch_np(model, graph_input, 1, k)
    return SemPrediction(delta=delta, cost=float(cost[0, 0]))


def sem_predict(model: SemModel, state: WorldState, params: SkillParams):
    """Effect-backend prediction: next state (positions shifted) and cost."""
    pred = sem_forward(model, encode_input(state, params, model.skill))
    blocks = tuple(
        b.with_position(np.asarray(b.position) + pred.delta[i, :3])
        for i, b in enumerate(state.blocks)
    )
    return WorldState(blocks), pred.cost


def delta_target(x0: WorldState, x_t: WorldState) -> np.ndarray:
    return node_features(x_t) - node_features(x0)


def sem_loss(pred: SemPrediction, x0: WorldState, x_t: WorldState, cost: float) -> float:
    k = len(x0.blocks)
    d = delta_target(x0, x_t)
    return float(LAMBDA_COST * (cost - pred.cost) ** 2
                 + (LAMBDA_STATE / k) * np.sum((d - pred.delta) ** 2))


class SemBackend:
    """Planner effect backend answering with learned models."""

    def __init__(self, models: dict[str, SemModel]):
        self.models = models

    def predict(self, skill: str, state: WorldState, params: SkillParams):
        return sem_predict(self.models[skill], state, params)

    def predict_batch(self, skill: str, state: WorldState, param_list):
        """Vectorized prediction for many parameter candidates of one state."""
        model = self.models[skill]
        k = len(state.blocks)
        feats = np.stack([encode_input(state, p, skill) for p in param_list])
        n = len(param_list)
        delta, cost = _forward_batch_np(model, feats.reshape(n * k, -1), n, k)
        delta = delta.reshape(n, k, -1)
        out = []
        base = state.positions()
        for i in range(n):
            blocks = tuple(
                b.with_position(base[j] + delta[i, j, :3])
                for j, b in enumerate(state.blocks)
            )
            out.append((WorldState(blocks), float(cost[i, 0])))
        return out


def _batch_loss(model: SemModel, feats: np.ndarray, deltas: np.ndarray,
                costs: np.ndarray, k: int) -> Tensor:
    n = len(costs)
    x = Tensor(feats)
    delta_hat, cost_hat = _forward_batch(model, x, n, k)
    cost_err = (cost_hat - Tensor(costs.reshape(-1, 1))).square().sum()
    delta_err = (delta_hat - Tensor(deltas)).square().sum()
    return cost_err * (LAMBDA_COST / n) + delta_err * (LAMBDA_STATE / (k * n))


def train(model: SemModel, records, epochs: int, rng: np.random.Generator,
          batch_size: int = 128, clip_norm: float = 5.0) -> list[float]:
    """Mini-batch Adam training; returns per-epoch mean loss.

    Fine-tunes in place: existing weights and optimizer state are reused.
    Gradients are clipped to a global norm of `clip_norm` — without it a
    single outsized batch late in a long run can blow the ReLU stack into a
    dead constant-output basin it never leaves.
    """
    if not records:
        raise TrainingError("empty dataset")
    by_k: dict[int, list] = {}
    for r in records:
        by_k.setdefault(len(r.x0.blocks), []).append(r)
    prepared = {}
    for k, rs in by_k.items():
        feats = np.stack([encode_input(r.x0, r.theta, model.skill) for r in rs])
        deltas = np.stack([delta_target(r.x0, r.xT) for r in rs])
        costs = np.array([r.cost for r in rs])
        prepared[k] = (feats, deltas, costs)
    params = model.parameters()
    history = []
    n_total = len(records)
    base_lr = model.adam.lr
    for epoch in range(epochs):
        # step the learning rate down over the tail of the run; the last
        # stretch at a tenth of the base rate settles the position error
        # noticeably compared to a flat schedule
        frac = epoch / max(epochs, 1)
        if frac >= 0.9:
            model.adam.lr = base_lr / 10.0
        elif frac >= 0.7:
            model.adam.lr = base_lr / 3.0
        epoch_loss = 0.0
        for k in sorted(prepared):
            feats, deltas, costs = prepared[k]
            n = len(costs)
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                b = len(idx)
                bf = feats[idx].reshape(b * k, -1)
                bd = deltas[idx].reshape(b * k, -1)
                bc = costs[idx]
                neural.zero_grads(params)
                loss = _batch_loss(model, bf, bd, bc, k)
                val = float(loss.data)
                if not np.isfinite(val):
                    raise TrainingError("non-finite loss")
                loss.backward()
                gn = math.sqrt(sum(float((p.grad ** 2).sum())
                                   for p in params if p.grad is not None))
                if gn > clip_norm:
                    scale = clip_norm / gn
                    for p in params:
                        if p.grad is not None:
                            p.grad = p.grad * scale
                neural.adam_step(params, model.adam)
                epoch_loss += val * b
        history.append(epoch_loss / n_total)
    model.adam.lr = base_lr
    model.meta["rounds_trained"] = model.meta.get("rounds_trained", 0) + 1
    model.meta["dataset_size"] = n_total
    return history


# --- checkpoint (de)serialization ---

def _mlp_to_json(mlp: Mlp):
    return [{"w": l.weight.data.tolist(), "b": l.bias.data.tolist()} for l in mlp.layers]


def _mlp_from_json(layers):
    from .neural import DenseLayer
    out = []
    for l in layers:
        w = Tensor(np.array(l["w"]), requires_grad=True)
        b = Tensor(np.array(l["b"]), requires_grad=True)
        if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[0] != b.data.shape[0]:
            raise ContractError("checkpoint layer shapes inconsistent")
        out.append(DenseLayer(w, b))
    for a, c in zip(out, out[1:]):
        if c.weight.data.shape[1] != a.weight.data.shape[0]:
            raise ContractError("checkpoint layer shapes do not chain")
    return Mlp(out)


def save_checkpoint(model: SemModel, path: Path, include_adam: bool = True):
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "skill": model.skill,
        "dims": {"s": S_DIM, "theta": THETA_DIMS[model.skill]},
        "modules": {
            "node_embed": _mlp_to_json(model.node_embed),
            "message": _mlp_to_json(model.message),
            "node_pred": _mlp_to_json(model.node_pred),
            "graph_pred": _mlp_to_json(model.graph_pred),
        },
        "meta": model.meta,
    }
    if include_adam and model.adam.step > 0:
        doc["adam"] = {
            "lr": model.adam.lr, "beta1": model.adam.beta1, "beta2": model.adam.beta2,
            "eps": model.adam.eps, "step": model.adam.step,
            "m": [m.tolist() for m in model.adam.m],
            "v": [v.tolist() for v in model.adam.v],
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))


def load_checkpoint(path: Path) -> SemModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ContractError(f"unsupported checkpoint schema {doc.get('schema_version')}")
    skill = doc["skill"]
    if skill not in THETA_DIMS:
        raise ContractError(f"unknown skill {skill!r}")
    mods = doc["modules"]
    model = SemModel(
        skill=skill,
        node_embed=_mlp_from_json(mods["node_embed"]),
        message=_mlp_from_json(mods["message"]),
        node_pred=_mlp_from_json(mods["node_pred"]),
        graph_pred=_mlp_from_json(mods["graph_pred"]),
        meta=doc.get("meta", {}),
    )
    if model.node_embed.layers[0].weight.data.shape[1] != S_DIM + THETA_DIMS[skill]:
        raise ContractError("node embed input dim does not match skill encoding")
    if model.node_pred.layers[-1].weight.data.shape[0] != S_DIM + GRAPH_FEAT_DIM:
        raise ContractError("node prediction output dim invalid")
    if "adam" in doc:
        a = doc["adam"]
        model.adam = AdamState(
            lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"],
            m=[np.array(m) for m in a["m"]], v=[np.array(v) for v in a["v"]],
        )
    return model
