"""Mini-batch training over hop subgraphs, optimizers, and weighted evaluation.

Each epoch partitions the series into shuffled mini-batches. Per batch, the
seed nodes' hop neighborhoods are extracted from every graph, the encoder
runs once over the union of those neighborhoods, the ensemble and decoder
produce forecasts at a fixed grid of creation times, and one optimizer step
follows the summed pinball loss. Because subgraph seed outputs match the
full-graph computation exactly, the per-batch gradients are unbiased pieces
of the full objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, evaluate
from .data import TimeSeriesDataset
from .graphs import gcn_coefficients, hop_subgraph
from .model import ModelConfig, build_batch_graph, forecast, head_layout, init_parameters
from .tensor import ParameterStore


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adamw"          # "sgd" or "adamw"
    weight_decay: float = 0.01
    seed: int = 0
    num_hops: int | None = None       # defaults to the ensemble depth
    top_k: int | None = None          # bookkeeping: graphs arrive pre-pruned
    train_t_end: int | None = None    # exclusive; defaults to 80% of the panel
    fct_stride: int | None = None     # 1 enumerates every creation time

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"need epochs >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"need batch size >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"need a positive learning rate, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    params: ParameterStore
    history: list[tuple[int, int, float]] = field(default_factory=list)
    fct_grid: tuple[int, ...] = ()
    train_t_end: int = 0

    def epoch_losses(self) -> dict[int, float]:
        sums: dict[int, list[float]] = {}
        for epoch, _batch, loss in self.history:
            sums.setdefault(epoch, []).append(loss)
        return {ep: float(np.mean(v)) for ep, v in sums.items()}


@dataclass
class EvalReport:
    """Weighted pinball losses per segment and quantile, plus their mean."""

    segments: dict[str, dict[str, float]]

    def rows(self):
        for segment, metrics in self.segments.items():
            for label, value in metrics.items():
                yield segment, label, value


def partition_batches(n: int, m: int, seed) -> list[np.ndarray]:
    """Shuffled disjoint batches of size m covering [0, n); the last may be short."""
    if m < 1:
        raise ValueError(f"need batch size >= 1, got {m}")
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i : i + m] for i in range(0, n, m)]


class SgdOptimizer:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: ParameterStore) -> None:
        for name, t in params.items():
            if not np.all(np.isfinite(t.grad)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            t.values -= self.learning_rate * t.grad


class AdamWOptimizer:
    """Adaptive moments with bias correction and decoupled weight decay.

    Decay multiplies the parameters directly each step instead of entering
    the gradient, so it is unaffected by the moment rescaling.
    """

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ParameterStore) -> None:
        self.count += 1
        c1 = 1.0 - self.beta1 ** self.count
        c2 = 1.0 - self.beta2 ** self.count
        for name, t in params.items():
            if not np.all(np.isfinite(t.grad)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            g = t.grad
            m = self._m.setdefault(name, np.zeros_like(t.values))
            v = self._v.setdefault(name, np.zeros_like(t.values))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                t.values *= 1.0 - self.learning_rate * self.weight_decay
            t.values -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.learning_rate)
    return AdamWOptimizer(cfg.learning_rate, weight_decay=cfg.weight_decay)


def fct_grid(context_length, t_end, max_horizon, stride=None):
    """Creation-time grid: from the first valid time to the last with targets."""
    hi = t_end - 1 - max_horizon
    if hi < context_length:
        raise ValueError("window too short: no valid forecast creation times")
    if stride is None:
        stride = max(1, (t_end - context_length) // 8)
    return tuple(range(context_length, hi + 1, stride))


def _batch_setup(graphs, cfg: ModelConfig, seeds, hops):
    """Union node order (seeds first), per-graph row positions and coefficients."""
    if cfg.gem is None:
        return np.asarray(seeds, dtype=np.int64), None, None
    union = list(int(s) for s in seeds)
    index = {v: i for i, v in enumerate(union)}
    batches = []
    for g in graphs:
        batch = hop_subgraph(g, seeds, hops)
        batches.append(batch)
        for v in batch.extended.tolist():
            if v not in index:
                index[v] = len(union)
                union.append(v)
    positions = [
        np.array([index[int(v)] for v in b.extended], dtype=np.int64) for b in batches
    ]
    coeffs = [gcn_coefficients(b) for b in batches]
    return np.asarray(union, dtype=np.int64), positions, coeffs


def batch_loss_inputs(ds: TimeSeriesDataset, seeds, fcts):
    """Targets expanded to head layout, quantile weights, and the cell mask.

    Cells whose target is not observed (a series not yet launched) carry a
    zero mask and contribute nothing to the loss or its gradients.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    fcts = np.asarray(fcts, dtype=np.int64)
    horizons = np.asarray(ds.horizons, dtype=np.int64)
    cells = (seeds[:, None, None], fcts[None, :, None] + horizons[None, None, :])
    targets = ds.y[cells]
    mask = ds.observed[cells].astype(np.float64)
    q_lo, q_hi = head_layout(ds.horizons, ds.quantiles)
    nq = len(ds.quantiles)
    return {
        "xs": ds.xs[seeds],
        "targets": np.repeat(targets, nq, axis=2),
        "cell_mask": np.repeat(mask, nq, axis=2),
        "q_lo": q_lo,
        "q_hi": q_hi,
    }


def train(ds: TimeSeriesDataset, graphs, cfg: TrainConfig, model: ModelConfig) -> TrainResult:
    """Run the mini-batch subgraph learning loop and return the fitted store.

    Deterministic for a fixed config: the seed drives initialization and the
    per-epoch batch shuffles, and batches run sequentially.
    """
    if model.gem is not None:
        if len(graphs) != model.gem.num_graphs:
            raise ValueError(f"expected {model.gem.num_graphs} graphs, got {len(graphs)}")
        for g in graphs:
            if g.num_nodes != ds.num_series:
                raise ValueError("graph node count does not match the panel")
    hops = cfg.num_hops if cfg.num_hops is not None else (
        model.gem.num_layers if model.gem is not None else 0
    )
    if model.gem is not None and hops != model.gem.num_layers:
        raise ValueError("hop depth must equal the number of aggregation layers")
    if model.encoder.past_reach > ds.context_length:
        raise ValueError("encoder receptive field exceeds the context length")

    t_end = cfg.train_t_end if cfg.train_t_end is not None else int(0.8 * ds.num_steps)
    if not ds.context_length < t_end <= ds.num_steps:
        raise ValueError(f"training window end {t_end} is out of range")
    grid = fct_grid(ds.context_length, t_end, max(ds.horizons), cfg.fct_stride)
    fcts = np.asarray(grid, dtype=np.int64)
    t_limit = int(fcts.max()) + 1

    params = init_parameters(
        model,
        in_channels=1 + ds.num_time_covariates,
        num_static=ds.num_static_covariates,
        num_heads=len(ds.horizons) * len(ds.quantiles),
        seed=cfg.seed,
    )
    # batch shuffles draw from a stream disjoint from the init stream
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))

    optimizer = make_optimizer(cfg)
    history: list[tuple[int, int, float]] = []
    for epoch in range(cfg.epochs):
        batches = partition_batches(ds.num_series, cfg.batch_size, shuffle_rng.integers(2**63))
        for batch_idx, seeds in enumerate(batches):
            union, positions, coeffs = _batch_setup(graphs, model, seeds, hops)
            graph = build_batch_graph(model, seeds.size, fcts, positions, coeffs, with_loss=True)
            inputs = batch_loss_inputs(ds, seeds, fcts)
            inputs["enc_in"] = ds.encoder_input(rows=union, t_limit=t_limit)
            values = evaluate(graph, inputs, params)
            loss = float(values["loss"].values)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            backward(graph, "loss", params, values, inputs)
            optimizer.step(params)
            history.append((epoch, batch_idx, loss))
    return TrainResult(params=params, history=history, fct_grid=grid, train_t_end=t_end)


def weighted_ql(targets, values, quantiles, mask):
    """Per-quantile sum of pinball losses over the mask, divided by summed demand.

    ``targets`` is (N, F, H) and ``values`` is (N, F, H, Q); ``mask`` selects
    series. Adds an "overall" entry holding the mean across quantiles.
    """
    out = {}
    d = targets[mask]
    denom = float(d.sum())
    if denom <= 0.0:
        raise ValueError("total demand over the evaluation slice is zero; metric undefined")
    for qi, q in enumerate(quantiles):
        err = d - values[mask][..., qi]
        loss = q * np.maximum(err, 0.0) + (1.0 - q) * np.maximum(-err, 0.0)
        out[f"{q:g}"] = float(loss.sum()) / denom
    out["overall"] = float(np.mean([out[f"{q:g}"] for q in quantiles]))
    return out


def evaluate_weighted_ql(
    ds: TimeSeriesDataset,
    params: ParameterStore,
    model: ModelConfig,
    graphs,
    split: tuple[int, int],
    segments: dict[str, np.ndarray] | None = None,
) -> EvalReport:
    """Demand-weighted pinball losses over a creation-time range.

    ``split`` is the half-open [start, end) range of creation times; every
    (series, time, horizon) cell inside it enters the aggregate. ``segments``
    maps segment names to boolean series masks evaluated alongside "all".
    """
    t0, t1 = split
    if t0 < ds.context_length:
        raise ValueError(f"split starts before the context length {ds.context_length}")
    max_h = max(ds.horizons)
    if t1 - 1 + max_h >= ds.num_steps:
        raise ValueError("split requires targets past the observed window")
    if t1 <= t0:
        raise ValueError("empty evaluation split")
    fcts = np.arange(t0, t1, dtype=np.int64)
    fc = forecast(ds, params, model, graphs, fcts)
    horizons = np.asarray(ds.horizons, dtype=np.int64)
    if not np.all(ds.observed[:, fcts[:, None] + horizons[None, :]]):
        raise ValueError("split touches targets that were never observed")
    targets = ds.y[:, fcts[:, None] + horizons[None, :]]  # (N, F, H)

    report: dict[str, dict[str, float]] = {}
    all_mask = np.ones(ds.num_series, dtype=bool)
    report["all"] = weighted_ql(targets, fc.values, ds.quantiles, all_mask)
    for name, mask in (segments or {}).items():
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (ds.num_series,):
            raise ValueError(f"segment {name!r} mask must cover all series")
        if mask.any():
            report[name] = weighted_ql(targets, fc.values, ds.quantiles, mask)
    return EvalReport(segments=report)
