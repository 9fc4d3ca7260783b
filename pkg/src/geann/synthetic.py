"""Clustered synthetic demand panels with cold-start launches and stockout gaps.

Each cluster shares a latent seasonal-plus-trend signal; a series is its
cluster signal times a private scale, plus noise, clipped at zero. A fraction
of series launch late (zero demand and a zero launch flag before launch) and
a disjoint fraction carries one out-of-stock window where observed demand is
forced to zero under a raised stockout flag. The bundle also carries the
ground-truth relational structure: a same-cluster neighbor graph and cluster
ids as attribute memberships.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeriesDataset
from .graphs import SparseGraph
from .model import EncoderConfig, ModelConfig
from .training import TrainConfig, train

SEASON_PERIOD = 12
TRUTH_NEIGHBORS = 10


@dataclass(frozen=True)
class SyntheticSpec:
    num_series: int
    num_steps: int
    num_clusters: int
    cold_start_fraction: float = 0.0
    oos_fraction: float = 0.0
    noise_scale: float = 0.0
    seed: int = 0
    context_length: int = 12
    horizons: tuple[int, ...] = (1, 2, 4)
    quantiles: tuple[float, ...] = (0.5, 0.9)

    def __post_init__(self):
        if self.num_clusters > self.num_series or self.num_clusters < 1:
            raise ValueError(
                f"need 1 <= clusters <= series, got {self.num_clusters} of {self.num_series}"
            )
        for frac in (self.cold_start_fraction, self.oos_fraction):
            if not 0.0 <= frac < 1.0:
                raise ValueError(f"fractions must lie in [0, 1), got {frac}")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be non-negative")


@dataclass(frozen=True)
class SeriesSegment:
    series: int
    kind: str                      # "normal", "cold_start", or "oos"
    launch: int | None = None
    oos_start: int | None = None
    oos_end: int | None = None     # exclusive


@dataclass
class SyntheticBundle:
    spec: SyntheticSpec
    dataset: TimeSeriesDataset
    truth_graph: SparseGraph
    memberships: dict[int, set[int]]
    segments: list[SeriesSegment] = field(repr=False)
    cluster_of: np.ndarray = field(repr=False, default=None)

    @property
    def train_t_end(self) -> int:
        return int(0.8 * self.spec.num_steps)

    def segment_masks(self) -> dict[str, np.ndarray]:
        masks = {
            "cold_start": np.zeros(self.spec.num_series, dtype=bool),
            "oos": np.zeros(self.spec.num_series, dtype=bool),
        }
        for seg in self.segments:
            if seg.kind in masks:
                masks[seg.kind][seg.series] = True
        return masks


def _cluster_signal(rng, t_axis):
    # seasonal swing comparable to the level, so phase matters for forecasts
    level = rng.uniform(2.5, 4.5)
    amp1 = rng.uniform(1.2, 2.8)
    amp2 = rng.uniform(0.4, 1.2)
    phase1 = rng.uniform(0.0, 2.0 * np.pi)
    phase2 = rng.uniform(0.0, 2.0 * np.pi)
    slope = rng.uniform(-2.0, 2.0)
    frac = t_axis / max(len(t_axis) - 1, 1)
    return (
        level
        + amp1 * np.sin(2.0 * np.pi * t_axis / SEASON_PERIOD + phase1)
        + amp2 * np.sin(4.0 * np.pi * t_axis / SEASON_PERIOD + phase2)
        + slope * (frac - 0.5)
    )


def generate(spec: SyntheticSpec) -> SyntheticBundle:
    """Deterministic bundle: panel, truth graph, memberships, segment labels."""
    rng = np.random.default_rng(spec.seed)
    n, t = spec.num_series, spec.num_steps
    t_axis = np.arange(t, dtype=np.float64)
    cluster_of = np.arange(n, dtype=np.int64) % spec.num_clusters

    signals = np.stack([_cluster_signal(rng, t_axis) for _ in range(spec.num_clusters)])
    scales = rng.uniform(0.5, 2.0, size=n)
    noise = rng.standard_normal((n, t)) if spec.noise_scale > 0 else np.zeros((n, t))
    y = np.maximum(scales[:, None] * signals[cluster_of] + spec.noise_scale * noise, 0.0)

    train_t_end = int(0.8 * t)
    launch_flag = np.ones((n, t))
    oos_flag = np.zeros((n, t))
    observed = np.ones((n, t), dtype=bool)
    segments: list[SeriesSegment] = [None] * n

    num_cold = int(spec.cold_start_fraction * n)
    num_oos = int(spec.oos_fraction * n)
    special = rng.choice(n, size=num_cold + num_oos, replace=False)
    cold_ids = np.sort(special[:num_cold])
    oos_ids = np.sort(special[num_cold:])

    launch_lo = int(np.ceil(0.7 * train_t_end))
    for i in cold_ids:
        launch = int(rng.integers(launch_lo, train_t_end))
        y[i, :launch] = 0.0
        launch_flag[i, :launch] = 0.0
        observed[i, :launch] = False  # pre-launch targets are placeholders
        segments[i] = SeriesSegment(int(i), "cold_start", launch=launch)

    oos_lo = int(0.75 * train_t_end)
    for i in oos_ids:
        width = int(rng.integers(4, 9))
        start = int(rng.integers(oos_lo, train_t_end - width + 1))
        y[i, start : start + width] = 0.0
        oos_flag[i, start : start + width] = 1.0
        segments[i] = SeriesSegment(int(i), "oos", oos_start=start, oos_end=start + width)

    for i in range(n):
        if segments[i] is None:
            segments[i] = SeriesSegment(i, "normal")

    xt = np.stack([launch_flag, oos_flag], axis=2)
    launch_frac = np.array(
        [seg.launch / t if seg.kind == "cold_start" else 0.0 for seg in segments]
    )
    # noisy size proxy: informative about scale without revealing it exactly
    size_proxy = scales * np.exp(0.4 * rng.standard_normal(n))
    xs = np.stack([size_proxy, launch_frac], axis=1)
    dataset = TimeSeriesDataset(
        y=y,
        xt=xt,
        xs=xs,
        context_length=spec.context_length,
        horizons=spec.horizons,
        quantiles=spec.quantiles,
        observed=observed,
    )

    src, dst = [], []
    for i in range(n):
        mates = np.flatnonzero(cluster_of == cluster_of[i])
        mates = mates[mates != i]
        take = min(TRUTH_NEIGHBORS, mates.size)
        if take:
            picks = rng.choice(mates, size=take, replace=False)
            src.extend(int(p) for p in picks)
            dst.extend([i] * take)
    truth_graph = SparseGraph(n, src, dst, np.ones(len(src)))
    memberships = {i: {int(cluster_of[i])} for i in range(n)}
    return SyntheticBundle(
        spec=spec,
        dataset=dataset,
        truth_graph=truth_graph,
        memberships=memberships,
        segments=segments,
        cluster_of=cluster_of,
    )


def pretrain_on_dataset(
    ds: TimeSeriesDataset,
    enc: EncoderConfig,
    epochs: int,
    seed: int = 0,
    train_t_end: int | None = None,
    batch_size: int = 128,
    learning_rate: float = 3e-3,
) -> np.ndarray:
    """Fit the graph-free variant, then emit flattened encoder trajectories.

    Row i holds series i's encoder states at every step from the context
    length to the training window end, frozen after the graph-free fit.
    Shape: (N, out_width * number of emitted steps).
    """
    from .autodiff import ComputeGraph, evaluate
    from .model import add_encoder_nodes

    t_end = int(0.8 * ds.num_steps) if train_t_end is None else train_t_end
    model = ModelConfig(encoder=enc, gem=None)
    cfg = TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        seed=seed,
        train_t_end=t_end,
    )
    result = train(ds, [], cfg, model)

    graph = ComputeGraph()
    out = add_encoder_nodes(graph, enc, "enc_in")
    values = evaluate(graph, {"enc_in": ds.encoder_input(t_limit=t_end)}, result.params)
    h_all = values[out].values  # (N, t_end, width)
    emitted = h_all[:, ds.context_length : t_end, :]
    return emitted.reshape(ds.num_series, -1)


def pretrain_embeddings(
    bundle: SyntheticBundle,
    enc: EncoderConfig,
    epochs: int,
    seed: int = 0,
    batch_size: int = 128,
    learning_rate: float = 3e-3,
) -> np.ndarray:
    """Graph-free pretraining over a bundle's panel; see :func:`pretrain_on_dataset`."""
    return pretrain_on_dataset(
        bundle.dataset,
        enc,
        epochs,
        seed=seed,
        train_t_end=bundle.train_t_end,
        batch_size=batch_size,
        learning_rate=learning_rate,
    )


def save_segments_csv(segments: list[SeriesSegment], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("series,segment,launch,oos_start,oos_end\n")
        for seg in segments:
            launch = "" if seg.launch is None else str(seg.launch)
            start = "" if seg.oos_start is None else str(seg.oos_start)
            end = "" if seg.oos_end is None else str(seg.oos_end)
            fh.write(f"{seg.series},{seg.kind},{launch},{start},{end}\n")


def load_segments_csv(path) -> list[SeriesSegment]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "series,segment,launch,oos_start,oos_end":
        raise ValueError(f"{path}: not a segments file")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        series, kind, launch, start, end = line.split(",")
        out.append(
            SeriesSegment(
                series=int(series),
                kind=kind,
                launch=int(launch) if launch else None,
                oos_start=int(start) if start else None,
                oos_end=int(end) if end else None,
            )
        )
    return out


def segment_masks(segments: list[SeriesSegment], num_series: int) -> dict[str, np.ndarray]:
    masks = {
        "cold_start": np.zeros(num_series, dtype=bool),
        "oos": np.zeros(num_series, dtype=bool),
    }
    for seg in segments:
        if seg.kind in masks:
            masks[seg.kind][seg.series] = True
    return masks
