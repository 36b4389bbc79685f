"""Surrogate unsupervised objective, exact gradients, finite-difference oracle, Adam loop.

The objective asks a small BiLSTM decoder to rebuild the primary feature
sequence from the score-weighted features ``p_t * x_t``, plus a squared
penalty pulling the mean score toward ``sigma_target``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lstm import bilstm_backward, bilstm_forward
from .model import FUSED, ScorerParams, init_params, scorer_backward, scorer_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Objective:
    total: float
    reconstruction: float
    sparsity: float
    lambda_sparsity: float
    sigma_target: float


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    lambda_sparsity: float = 1.0
    sigma_target: float = 0.15
    seed: int = 0
    m: int | None = None
    strategy: str = "late"
    primary_source: str = "objects"
    hidden: int = 32
    decoder_hidden: int = 32

    def validate(self):
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.learning_rate < 0:
            problems.append("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            problems.append("adam epsilon must be positive")
        if self.clip_norm <= 0:
            problems.append("clip_norm must be positive")
        if self.lambda_sparsity < 0:
            problems.append("lambda_sparsity must be >= 0")
        if not 0 < self.sigma_target < 1:
            problems.append("sigma_target must lie in (0, 1)")
        if self.m is not None and self.m < 1:
            problems.append("m must be positive")
        if problems:
            raise ValueError("; ".join(problems))
        return self


class NonFiniteLossError(RuntimeError):
    pass


def init_decoder(dim, hidden, seed) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 0xDEC])
    t = {}
    for direction in ("fwd", "bwd"):
        b1, b2 = 1 / math.sqrt(dim), 1 / math.sqrt(hidden)
        t[f"decoder.{direction}.W"] = rng.uniform(-b1, b1, (4 * hidden, dim))
        t[f"decoder.{direction}.U"] = rng.uniform(-b2, b2, (4 * hidden, hidden))
        b = rng.uniform(-b2, b2, 4 * hidden)
        b[hidden:2 * hidden] = 1.0
        t[f"decoder.{direction}.b"] = b
    bound = 1 / math.sqrt(2 * hidden)
    t["decoder.head.W"] = rng.uniform(-bound, bound, (dim, 2 * hidden))
    t["decoder.head.b"] = rng.uniform(-bound, bound, dim)
    return t


def primary_lane(scorer: ScorerParams, config: TrainConfig) -> str:
    if scorer.strategy == "early":
        return FUSED
    if config.primary_source in scorer.sources:
        return config.primary_source
    return scorer.sources[0]


def _decoder_rnn(decoder):
    return tuple(tuple(decoder[f"decoder.{d}.{p}"] for p in "WUb") for d in ("fwd", "bwd"))


def _forward_loss(record, scorer, decoder, config):
    """Loss terms (arrays over any leading batch axes of the parameters) + intermediates."""
    p, sc = scorer_forward(record, scorer, config.m)
    lane = primary_lane(scorer, config)
    x = sc["fused"] if lane == FUSED else sc["feats"][lane]
    head_W = decoder["decoder.head.W"]
    if head_W.shape[-2] != x.shape[-1]:
        raise ValueError(f"decoder reconstructs dim {head_W.shape[-2]}, "
                         f"primary stream has dim {x.shape[-1]}")
    u = p[..., None] * x
    fwd, bwd = _decoder_rnn(decoder)
    H, dcache = bilstm_forward(u[..., None, :, :], fwd, bwd)
    H = H[..., 0, :, :]
    xhat = H @ np.swapaxes(head_W, -1, -2) + decoder["decoder.head.b"][..., None, :]
    err = xhat - x
    rec = np.mean(err * err, axis=(-2, -1))
    gap = p.mean(axis=-1) - config.sigma_target
    sp = gap * gap
    total = rec + config.lambda_sparsity * sp
    return (total, rec, sp), (p, sc, lane, x, H, dcache, err, gap)


def _evaluate(record, scorer, decoder, config, with_grads):
    (total, rec, sp), inter = _forward_loss(record, scorer, decoder, config)
    obj = Objective(float(total), float(rec), float(sp), config.lambda_sparsity, config.sigma_target)
    if not with_grads:
        return obj, None

    p, sc, lane, x, H, dcache, err, gap = inter
    T, D = x.shape
    dxhat = 2.0 * err / (T * D)
    dgrads = {
        "decoder.head.W": dxhat.T @ H,
        "decoder.head.b": dxhat.sum(axis=0),
    }
    du, gf, gb = bilstm_backward((dxhat @ decoder["decoder.head.W"])[None], dcache)
    du = du[0]
    for direction, g in (("fwd", gf), ("bwd", gb)):
        for name, val in zip("WUb", g):
            dgrads[f"decoder.{direction}.{name}"] = val
    dp = (du * x).sum(axis=1) + 2.0 * config.lambda_sparsity * gap / T
    dfused = None
    if lane == FUSED:
        dfused = du * p[:, None] - dxhat
    grads = scorer_backward(dp, scorer, sc, dfused=dfused)
    grads.update(dgrads)
    return obj, grads


def surrogate_loss(record, scorer, decoder, config) -> Objective:
    return _evaluate(record, scorer, decoder, config, False)[0]


def backward(record, scorer, decoder, config) -> dict[str, np.ndarray]:
    """Exact gradient of ``Objective.total`` for every scorer and decoder tensor."""
    return _evaluate(record, scorer, decoder, config, True)[1]


def loss_and_grads(record, scorer, decoder, config):
    return _evaluate(record, scorer, decoder, config, True)


def finite_difference_gradient(record, scorer, decoder, config, epsilon=1e-5, batch_size=256):
    """Central differences ``(L(theta+eps) - L(theta-eps)) / 2 eps`` for every scalar parameter.

    Perturbed copies of one tensor are stacked on a leading axis and
    evaluated together (up to ``batch_size`` at a time); every copy differs
    from the current parameters in exactly one coordinate.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    out = {}
    for table in (scorer.tensors, decoder):
        for name, arr in table.items():
            flat_grad = np.empty(arr.size)
            for lo in range(0, arr.size, batch_size):
                coords = np.arange(lo, min(lo + batch_size, arr.size))
                losses = []
                for sign in (1.0, -1.0):
                    pert = np.repeat(arr.reshape(1, -1), len(coords), axis=0)
                    pert[np.arange(len(coords)), coords] += sign * epsilon
                    pert = pert.reshape((len(coords),) + arr.shape)
                    if table is decoder:
                        s, dec = scorer, {**decoder, name: pert}
                    else:
                        s, dec = scorer.copy({**scorer.tensors, name: pert}), decoder
                    losses.append(_forward_loss(record, s, dec, config)[0][0])
                flat_grad[coords] = (losses[0] - losses[1]) / (2 * epsilon)
            out[name] = flat_grad.reshape(arr.shape)
    return out


@dataclass
class GradCheckReport:
    epsilon: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    argmax: dict[str, tuple] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def gradient_check(record, scorer, decoder, config, epsilon=1e-5) -> GradCheckReport:
    analytic = backward(record, scorer, decoder, config)
    numeric = finite_difference_gradient(record, scorer, decoder, config, epsilon)
    report = GradCheckReport(epsilon)
    for name, num in numeric.items():
        rel = relative_error(analytic[name], num)
        idx = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
        report.max_rel_error[name] = float(rel.max()) if rel.size else 0.0
        report.argmax[name] = tuple(int(i) for i in idx)
    return report


# ---------------------------------------------------------------- optimisation

class Adam:
    def __init__(self, tables, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tables = tables
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in tab.items()} for tab in tables]
        self.v = [{k: np.zeros_like(v) for k, v in tab.items()} for tab in tables]

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for tab, m, v in zip(self.tables, self.m, self.v):
            for name in sorted(tab):
                g = grads[name]
                m[name] = self.beta1 * m[name] + (1 - self.beta1) * g
                v[name] = self.beta2 * v[name] + (1 - self.beta2) * g * g
                tab[name] -= self.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + self.eps)


def clip_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class TrainResult:
    scorer: ScorerParams
    decoder: dict[str, np.ndarray]
    history: list[Objective]  # history[0] is the untrained model, history[e] after epoch e


def _mean_objective(records, scorer, decoder, config) -> Objective:
    objs = [surrogate_loss(r, scorer, decoder, config) for r in records]
    n = len(objs)
    return Objective(sum(o.total for o in objs) / n, sum(o.reconstruction for o in objs) / n,
                     sum(o.sparsity for o in objs) / n, config.lambda_sparsity, config.sigma_target)


def train(records, config: TrainConfig, scorer: ScorerParams | None = None,
          sources=None, common_dim=None, late_fusion_space="logit") -> TrainResult:
    """Per-video Adam updates over seeded shuffled epochs.

    ``records`` is a sequence of VideoRecords (or a Dataset).  The history
    holds the mean objective over all records before training and after each
    epoch.
    """
    config.validate()
    records = list(records.videos.values()) if hasattr(records, "videos") else list(records)
    if not records:
        raise ValueError("cannot train on an empty dataset")
    if scorer is None:
        dims = {k: s.dim for k, s in records[0].streams.items()}
        if sources is None:
            sources = (config.primary_source,) if config.strategy == "single" else tuple(sorted(dims))
        scorer = init_params(config.strategy, {s: dims[s] for s in sources}, hidden=config.hidden,
                             common_dim=common_dim, seed=config.seed, sources=sources,
                             late_fusion_space=late_fusion_space)
    else:
        scorer = scorer.copy()
    lane = primary_lane(scorer, config)
    dec_dim = scorer.lane_dim(lane)
    decoder = init_decoder(dec_dim, config.decoder_hidden, config.seed)

    opt = Adam([scorer.tensors, decoder], config.learning_rate, config.beta1, config.beta2,
               config.adam_eps)
    rng = np.random.default_rng([config.seed, 0x5EED])
    history = [_mean_objective(records, scorer, decoder, config)]
    for epoch in range(1, config.epochs + 1):
        for i in rng.permutation(len(records)):
            rec = records[i]
            obj, grads = loss_and_grads(rec, scorer, decoder, config)
            if not math.isfinite(obj.total):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, video {rec.video_id}")
            clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
        history.append(_mean_objective(records, scorer, decoder, config))
        log.debug("epoch %d total %.6f", epoch, history[-1].total)
    return TrainResult(scorer, decoder, history)


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "total", "reconstruction", "sparsity"])
        for epoch, obj in enumerate(history):
            w.writerow([epoch, repr(obj.total), repr(obj.reconstruction), repr(obj.sparsity)])


def objective_dict(obj: Objective) -> dict:
    return asdict(obj)
