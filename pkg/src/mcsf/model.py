"""MCSF scorer: per-stream chunk/stride BiLSTM branches + difference attention,
fused early, intermediate or late into per-step selection probabilities.

Parameters are kept in a flat ``{name: ndarray}`` dict so that gradient
checking, optimisation and checkpointing all walk the same structure.
Per lane (a source name, or ``"fused"`` under early fusion)::

    <lane>.<chunk|stride>_rnn.<fwd|bwd>.<W|U|b>
    <lane>.<chunk|stride>_head.<w|b>
    <lane>.attention.<w|b>
    projection.<source>.<W|b>          (early fusion only)
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .decomp import BRANCHES, DEFAULT_DELTAS, attention_from_params, decompose, lagged_abs_differences
from .lstm import lstm_backward, lstm_forward, sigmoid, stack_broadcast

STRATEGIES = ("single", "early", "intermediate", "late")
LATE_SPACES = ("logit", "probability")
FUSED = "fused"


@dataclass
class ScorerParams:
    strategy: str
    sources: tuple[str, ...]
    dims: dict[str, int]
    hidden: int
    common_dim: int | None
    deltas: tuple[int, ...]
    seed: int
    late_fusion_space: str = "logit"
    share_branch_rnn: bool = False
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lanes(self) -> tuple[str, ...]:
        return (FUSED,) if self.strategy == "early" else self.sources

    def lane_dim(self, lane: str) -> int:
        return self.common_dim if lane == FUSED else self.dims[lane]

    def rnn_name(self, branch: str) -> str:
        return "chunk_rnn" if self.share_branch_rnn else f"{branch}_rnn"

    def stream(self, lane: str) -> "StreamParams":
        return StreamParams(lane, self.tensors, self.deltas, self.share_branch_rnn)

    def copy(self, tensors=None) -> "ScorerParams":
        if tensors is None:
            tensors = {k: v.copy() for k, v in self.tensors.items()}
        return replace(self, dims=dict(self.dims), tensors=tensors)


@dataclass(frozen=True)
class StreamParams:
    """View of the tensors belonging to one lane of the scorer."""

    lane: str
    tensors: dict[str, np.ndarray]
    deltas: tuple[int, ...] = DEFAULT_DELTAS
    share_branch_rnn: bool = False

    def __getitem__(self, name):
        return self.tensors[f"{self.lane}.{name}"]

    def rnn(self, branch):
        rnn = "chunk_rnn" if self.share_branch_rnn else f"{branch}_rnn"
        return tuple(tuple(self[f"{rnn}.{d}.{p}"] for p in "WUb") for d in ("fwd", "bwd"))


def _check_strategy(strategy, sources, dims):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(set(sources)) != len(sources):
        raise ValueError(f"duplicate sources {sources}")
    arity = 1 if strategy == "single" else 2
    if len(sources) != arity:
        raise ValueError(f"strategy {strategy!r} needs {arity} source(s), got {list(sources)}")
    missing = [s for s in sources if s not in dims]
    if missing:
        raise ValueError(f"no input dim given for sources {missing}")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_rnn(rng, tensors, prefix, d_in, h):
    for direction in ("fwd", "bwd"):
        tensors[f"{prefix}.{direction}.W"] = _uniform(rng, (4 * h, d_in), d_in)
        tensors[f"{prefix}.{direction}.U"] = _uniform(rng, (4 * h, h), h)
        b = _uniform(rng, (4 * h,), h)
        b[h:2 * h] = 1.0
        tensors[f"{prefix}.{direction}.b"] = b


def init_params(strategy, dims, hidden=32, common_dim=None, seed=0, sources=None,
                deltas=DEFAULT_DELTAS, late_fusion_space="logit",
                share_branch_rnn=False) -> ScorerParams:
    """Seeded initialisation of every scorer tensor.

    ``sources`` defaults to the keys of ``dims`` (sorted).  Under early fusion
    ``common_dim`` defaults to the smallest source dim.
    """
    dims = {k: int(v) for k, v in dims.items()}
    sources = tuple(sorted(dims) if sources is None else sources)
    _check_strategy(strategy, sources, dims)
    if late_fusion_space not in LATE_SPACES:
        raise ValueError(f"late_fusion_space must be one of {LATE_SPACES}")
    if hidden < 1:
        raise ValueError("hidden size must be >= 1")
    deltas = tuple(int(d) for d in deltas)
    if not deltas or min(deltas) < 1:
        raise ValueError(f"difference distances must be positive, got {deltas}")
    if strategy == "early":
        common_dim = int(common_dim or min(dims[s] for s in sources))
    else:
        common_dim = None
    params = ScorerParams(strategy, sources, {s: dims[s] for s in sources}, int(hidden), common_dim,
                          deltas, int(seed), late_fusion_space, bool(share_branch_rnn))

    rng = np.random.default_rng(seed)
    t = params.tensors
    if strategy == "early":
        for s in sources:
            t[f"projection.{s}.W"] = _uniform(rng, (common_dim, dims[s]), dims[s])
            t[f"projection.{s}.b"] = _uniform(rng, (common_dim,), dims[s])
    h = params.hidden
    for lane in params.lanes:
        d = params.lane_dim(lane)
        for branch in BRANCHES:
            rnn = params.rnn_name(branch)
            if f"{lane}.{rnn}.fwd.W" not in t:
                _init_rnn(rng, t, f"{lane}.{rnn}", d, h)
        for branch in BRANCHES:
            t[f"{lane}.{branch}_head.w"] = _uniform(rng, (2 * h,), 2 * h)
            t[f"{lane}.{branch}_head.b"] = _uniform(rng, (1,), 2 * h)
        t[f"{lane}.attention.w"] = _uniform(rng, (len(deltas), d), d)
        t[f"{lane}.attention.b"] = _uniform(rng, (len(deltas),), d)
    return params


def resolve_m(n_steps, m=None):
    if m is None:
        return max(1, math.ceil(math.sqrt(n_steps)))
    return min(int(m), n_steps)


# ---------------------------------------------------------------- lanes

# order of the stacked recurrences inside one lane
_RUNS = (("chunk", "fwd"), ("chunk", "bwd"), ("stride", "fwd"), ("stride", "bwd"))


@functools.lru_cache(maxsize=256)
def _run_indices(n_steps, m):
    dec = decompose(n_steps, m)
    idx = np.stack([dec.padded_indices(branch, reverse=(direction == "bwd"))
                    for branch, direction in _RUNS])
    idx.flags.writeable = False
    return idx


def _lane_forward(x, sp: StreamParams, dec):
    """Raw lane score r = c' + s' + d.

    All four recurrences (chunk/stride x forward/backward) run as one batched
    LSTM over padded segments; see ``Decomposition.padded_indices``.  ``x`` and
    the lane tensors may carry leading batch axes.
    """
    T, d = x.shape[-2:]
    idx = _run_indices(dec.n_steps, dec.m)
    xpad = np.concatenate([x, np.zeros(x.shape[:-2] + (1, d))], axis=-2)
    weights = [sp.rnn(branch)[0 if direction == "fwd" else 1] for branch, direction in _RUNS]
    W, U, b = (stack_broadcast(ws, axis=-2 if k == 2 else -3) for k, ws in enumerate(zip(*weights)))
    H, lstm_cache = lstm_forward(xpad[..., idx, :], W, U, b)
    h = H.shape[-1]
    lead = H.shape[:-4]

    total = 0.0
    hidden = {}
    for j, branch in enumerate(BRANCHES):
        Hb = np.zeros(lead + (T + 1, 2 * h))
        Hb[..., idx[2 * j], :h] = H[..., 2 * j, :, :, :]
        Hb[..., idx[2 * j + 1], h:] = H[..., 2 * j + 1, :, :, :]
        Hb = Hb[..., :T, :]
        hidden[branch] = Hb
        total = total + np.einsum("...tk,...k->...t", Hb, sp[f"{branch}_head.w"]) + sp[f"{branch}_head.b"]
    att = attention_from_params(x, sp["attention.w"], sp["attention.b"], sp.deltas)
    cache = {"x": x, "idx": idx, "lstm": lstm_cache, "hidden": hidden}
    return total + att, cache


def _lane_backward(dr, sp: StreamParams, cache, grads):
    """Accumulate parameter gradients into ``grads``; return d(loss)/dx."""
    x, idx = cache["x"], cache["idx"]
    T, d = x.shape
    lane = sp.lane
    h = cache["lstm"][2].shape[2]
    dH = []
    for branch in BRANCHES:
        w = sp[f"{branch}_head.w"]
        grads[f"{lane}.{branch}_head.w"] += cache["hidden"][branch].T @ dr
        grads[f"{lane}.{branch}_head.b"] += dr.sum()
        dHb = np.vstack([np.outer(dr, w), np.zeros((1, 2 * h))])
        dH.append(dHb[idx[len(dH)], :h])
        dH.append(dHb[idx[len(dH)], h:])
    dxs, dW, dU, db = lstm_backward(np.stack(dH), cache["lstm"])
    for k, (branch, direction) in enumerate(_RUNS):
        rnn = "chunk_rnn" if sp.share_branch_rnn else f"{branch}_rnn"
        prefix = f"{lane}.{rnn}.{direction}"
        grads[f"{prefix}.W"] += dW[k]
        grads[f"{prefix}.U"] += dU[k]
        grads[f"{prefix}.b"] += db[k]
    dxpad = np.zeros((T + 1, d))
    np.add.at(dxpad, idx, dxs)
    dx = dxpad[:T]

    absd, diffs = lagged_abs_differences(x, sp.deltas)
    grads[f"{lane}.attention.w"] += np.einsum("ktd,t->kd", absd, dr)
    grads[f"{lane}.attention.b"] += dr.sum()
    aw = sp["attention.w"]
    t = np.arange(T)
    for k, delta in enumerate(sp.deltas):
        dd = dr[:, None] * aw[k] * np.sign(diffs[k])
        dx += dd
        np.add.at(dx, np.maximum(t - delta, 0), -dd)
    return dx


def stream_raw_scores(stream, params: StreamParams, m=None):
    """Raw (pre-sigmoid) per-step score of one lane: chunk + stride + attention."""
    x = getattr(stream, "values", stream)
    d = params["attention.w"].shape[1]
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"lane {params.lane} expects dim {d}, got shape {x.shape}")
    dec = decompose(x.shape[0], resolve_m(x.shape[0], m))
    r, _ = _lane_forward(x, params, dec)
    return r


# ---------------------------------------------------------------- scorer

def _features(record):
    streams = getattr(record, "streams", record)
    return {k: getattr(v, "values", v) for k, v in streams.items()}


def scorer_forward(record, params: ScorerParams, m=None):
    """Probabilities plus everything the backward pass needs."""
    feats = _features(record)
    missing = [s for s in params.sources if s not in feats]
    if missing:
        raise ValueError(f"record lacks sources {missing} required by {params.strategy} scorer")
    for s in params.sources:
        if feats[s].shape[1] != params.dims[s]:
            raise ValueError(f"source {s}: dim {feats[s].shape[1]} != scorer dim {params.dims[s]}")
    T = feats[params.sources[0]].shape[0]
    dec = decompose(T, resolve_m(T, m))
    tn = params.tensors
    cache = {"dec": dec, "feats": feats, "lanes": {}}

    if params.strategy == "early":
        fused = 0.0
        for s in params.sources:
            fused = fused + feats[s] @ np.swapaxes(tn[f"projection.{s}.W"], -1, -2) \
                + tn[f"projection.{s}.b"][..., None, :]
        cache["fused"] = fused
        lane_inputs = {FUSED: fused}
    else:
        lane_inputs = {s: feats[s] for s in params.sources}

    raw = {}
    for lane, x in lane_inputs.items():
        raw[lane], cache["lanes"][lane] = _lane_forward(x, params.stream(lane), dec)
    cache["raw"] = raw

    if params.strategy == "late" and params.late_fusion_space == "probability":
        lane_p = {lane: sigmoid(r) for lane, r in raw.items()}
        cache["lane_p"] = lane_p
        z = sum(lane_p[lane] for lane in params.lanes)
    else:
        # single / early / intermediate / late(logit) all squash a sum of raw lane scores
        z = sum(raw[lane] for lane in params.lanes)
    p = sigmoid(z)
    cache["p"] = p
    return p, cache


def scorer_backward(dp, params: ScorerParams, cache, dfused=None):
    """Gradients of a scalar loss w.r.t. every scorer tensor, given dL/dp.

    ``dfused`` adds a direct dependence of the loss on the early-fusion
    features (used when they are also the reconstruction target).
    """
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    p = cache["p"]
    dz = dp * p * (1.0 - p)
    if "lane_p" in cache:
        draw = {lane: dz * q * (1.0 - q) for lane, q in cache["lane_p"].items()}
    else:
        draw = {lane: dz for lane in params.lanes}
    dx = {}
    for lane in params.lanes:
        dx[lane] = _lane_backward(draw[lane], params.stream(lane), cache["lanes"][lane], grads)
    if params.strategy == "early":
        dfx = dx[FUSED] if dfused is None else dx[FUSED] + dfused
        for s in params.sources:
            grads[f"projection.{s}.W"] += dfx.T @ cache["feats"][s]
            grads[f"projection.{s}.b"] += dfx.sum(axis=0)
    return grads


def forward(record, params: ScorerParams, m=None) -> np.ndarray:
    """Per-step selection probabilities ``p`` in (0, 1)."""
    return scorer_forward(record, params, m)[0]


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "mcsf-checkpoint-v1"


def save_checkpoint(params: ScorerParams, path, m=None, extra=None):
    """Write ``<path>.json`` (metadata + tensor table) and ``<path>.bin``.

    The binary file is the concatenation of every tensor as little-endian
    float32, row-major, in the order listed in the JSON ``tensors`` table
    (``offset`` and ``shape`` per entry, offsets in bytes).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    offset = 0
    chunks = []
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = {
        "format": CHECKPOINT_FORMAT,
        "strategy": params.strategy,
        "sources": list(params.sources),
        "dims": params.dims,
        "hidden": params.hidden,
        "common_dim": params.common_dim,
        "deltas": list(params.deltas),
        "m": m,
        "seed": params.seed,
        "late_fusion_space": params.late_fusion_space,
        "share_branch_rnn": params.share_branch_rnn,
        "tensors": table,
    }
    if extra:
        meta["extra"] = extra
    json_path = path.with_suffix(".json")
    bin_path = path.with_suffix(".bin")
    json_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    bin_path.write_bytes(b"".join(chunks))
    return json_path, bin_path


def load_checkpoint(path) -> tuple[ScorerParams, int | None]:
    path = Path(path)
    json_path = path.with_suffix(".json")
    bin_path = path.with_suffix(".bin")
    for p in (json_path, bin_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing checkpoint file {p}")
    meta = json.loads(json_path.read_text(encoding="utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{json_path}: unknown checkpoint format {meta.get('format')!r}")
    blob = bin_path.read_bytes()
    tensors = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + 4 * n > len(blob):
            raise ValueError(f"{bin_path}: truncated at tensor {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
    params = ScorerParams(meta["strategy"], tuple(meta["sources"]), dict(meta["dims"]), meta["hidden"],
                          meta["common_dim"], tuple(meta["deltas"]), meta["seed"],
                          meta["late_fusion_space"], meta["share_branch_rnn"], tensors)
    return params, meta["m"]
