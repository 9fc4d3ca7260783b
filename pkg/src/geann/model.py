"""The forecaster: temporal and static encoders, the graph ensemble module,
the per-horizon quantile decoder, and the quantile loss.

The network is assembled as a :class:`~geann.autodiff.ComputeGraph`. Encoder
states flow through R parallel graph-convolution stacks over fixed graphs;
their outputs combine under softmax-simplex weights and join the encoder and
static states in the decoder, which emits one head per (horizon, quantile)
pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ComputeGraph, evaluate
from .data import TimeSeriesDataset
from .graphs import SubgraphBatch, gcn_coefficients
from .tensor import ParameterStore
from . import _accel


@dataclass(frozen=True)
class EncoderConfig:
    """Stack of dilated causal 1-D convolutions with rectifier activations."""

    kernel_size: int = 2
    dilations: tuple[int, ...] = (1, 2, 4)
    channels: tuple[int, ...] = (16, 16, 16)

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError(f"kernel size must be >= 1, got {self.kernel_size}")
        if len(self.dilations) != len(self.channels) or not self.dilations:
            raise ValueError("dilations and channels must be non-empty and equal length")
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be >= 1")

    @property
    def out_width(self) -> int:
        return self.channels[-1]

    @property
    def past_reach(self) -> int:
        """Number of past steps the deepest output can see, excluding t itself."""
        return (self.kernel_size - 1) * sum(self.dilations)


@dataclass(frozen=True)
class GemConfig:
    """R parallel stacks of graph-convolution layers, convexly combined."""

    num_graphs: int
    num_layers: int = 2
    hidden_width: int = 16
    out_width: int = 16

    def __post_init__(self):
        if self.num_graphs < 1 or self.num_layers < 1:
            raise ValueError("need at least one graph and one layer")
        if self.hidden_width < 1 or self.out_width < 1:
            raise ValueError("widths must be positive")

    def layer_widths(self, in_width: int) -> list[tuple[int, int]]:
        widths = []
        prev = in_width
        for layer in range(self.num_layers):
            out = self.out_width if layer == self.num_layers - 1 else self.hidden_width
            widths.append((prev, out))
            prev = out
        return widths


@dataclass(frozen=True)
class ModelConfig:
    """Full architecture: encoder, optional graph ensemble, decoder widths."""

    encoder: EncoderConfig
    gem: GemConfig | None = None
    static_hidden: int = 8
    static_width: int = 8
    decoder_hidden: int = 16


class QuantileForecast:
    """Forecast values indexed by (series, creation time, horizon, quantile)."""

    def __init__(self, series, fct_times, horizons, quantiles, values):
        self.series = np.asarray(series, dtype=np.int64)
        self.fct_times = np.asarray(fct_times, dtype=np.int64)
        self.horizons = tuple(horizons)
        self.quantiles = tuple(quantiles)
        self.values = np.asarray(values, dtype=np.float64)
        expected = (
            self.series.size,
            self.fct_times.size,
            len(self.horizons),
            len(self.quantiles),
        )
        if self.values.shape != expected:
            raise ValueError(f"forecast values must have shape {expected}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("forecast values must be finite")


def init_parameters(cfg: ModelConfig, in_channels, num_static, num_heads, seed) -> ParameterStore:
    """Seeded uniform initialization in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    store = ParameterStore(seed=seed)

    def uniform(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    enc = cfg.encoder
    prev = in_channels
    for i, width in enumerate(enc.channels):
        k = enc.kernel_size
        store.add(f"enc.conv{i}.w", uniform((k, prev, width), k * prev, k * width))
        store.add(f"enc.conv{i}.b", np.zeros(width))
        prev = width

    store.add("static.w0", uniform((num_static, cfg.static_hidden), num_static, cfg.static_hidden))
    store.add("static.b0", np.zeros(cfg.static_hidden))
    store.add("static.w1", uniform((cfg.static_hidden, cfg.static_width), cfg.static_hidden, cfg.static_width))
    store.add("static.b1", np.zeros(cfg.static_width))

    dec_in = enc.out_width + cfg.static_width
    if cfg.gem is not None:
        for r in range(cfg.gem.num_graphs):
            for layer, (w_in, w_out) in enumerate(cfg.gem.layer_widths(enc.out_width)):
                store.add(f"gem.g{r}.l{layer}.w", uniform((w_in, w_out), w_in, w_out))
        store.add("gem.logits", np.zeros(cfg.gem.num_graphs))
        dec_in += cfg.gem.out_width

    store.add("dec.w0", uniform((dec_in, cfg.decoder_hidden), dec_in, cfg.decoder_hidden))
    store.add("dec.b0", np.zeros(cfg.decoder_hidden))
    store.add("dec.w1", uniform((cfg.decoder_hidden, num_heads), cfg.decoder_hidden, num_heads))
    store.add("dec.b1", np.zeros(num_heads))
    return store


# ---------------------------------------------------------------------------
# graph assembly helpers


def add_encoder_nodes(g: ComputeGraph, cfg: EncoderConfig, in_name: str, prefix: str = "enc") -> str:
    name = in_name
    for i, dilation in enumerate(cfg.dilations):
        conv = g.add(f"{prefix}.c{i}", "conv1d", name, f"enc.conv{i}.w", f"enc.conv{i}.b", dilation=dilation)
        name = g.add(f"{prefix}.a{i}", "relu", conv)
    return name


def add_static_nodes(g: ComputeGraph, in_name: str, prefix: str = "static") -> str:
    h = g.add(f"{prefix}.h", "linear", in_name, "static.w0", "static.b0")
    a = g.add(f"{prefix}.r", "relu", h)
    return g.add(f"{prefix}.out", "linear", a, "static.w1", "static.b1")


def add_gcn_stack_nodes(g, cfg: GemConfig, in_name, coeffs, r, prefix="gem") -> str:
    name = in_name
    for layer in range(cfg.num_layers):
        agg = g.add(
            f"{prefix}.g{r}.agg{layer}",
            "graph_agg",
            name,
            src=coeffs.src,
            dst=coeffs.dst,
            coeff=coeffs.coeff,
            self_coeff=coeffs.self_coeff,
        )
        lin = g.add(f"{prefix}.g{r}.lin{layer}", "linear", agg, f"gem.g{r}.l{layer}.w")
        if layer < cfg.num_layers - 1:
            name = g.add(f"{prefix}.g{r}.act{layer}", "relu", lin)
        else:
            name = lin  # final layer keeps the identity activation
    return name


def add_forward_nodes(
    g: ComputeGraph,
    cfg: ModelConfig,
    num_seeds: int,
    fct_index: np.ndarray,
    subgraph_positions: list[np.ndarray] | None,
    agg_coeffs: list | None,
) -> str:
    """Wire encoder input through to the per-head forecast node.

    Expects graph inputs "enc_in" over the union node set (seeds first) and
    "xs" over the seeds. Returns the forecast node name, shaped
    (num_seeds, len(fct_index), num_heads).
    """
    h_all = add_encoder_nodes(g, cfg.encoder, "enc_in")
    h_fct = g.add("h_fct", "gather", h_all, axis=1, indices=np.asarray(fct_index, dtype=np.int64))
    seed_rows = np.arange(num_seeds, dtype=np.int64)
    h_seed = g.add("h_seed", "gather", h_fct, axis=0, indices=seed_rows)

    parts = [h_seed]
    if cfg.gem is not None:
        stack_outs = []
        for r in range(cfg.gem.num_graphs):
            rows = g.add(
                f"gem.g{r}.rows",
                "gather",
                h_fct,
                axis=0,
                indices=np.asarray(subgraph_positions[r], dtype=np.int64),
            )
            out = add_gcn_stack_nodes(g, cfg.gem, rows, agg_coeffs[r], r)
            stack_outs.append(g.add(f"gem.g{r}.seed", "gather", out, axis=0, indices=seed_rows))
        weights = g.add("gem.weights", "softmax", "gem.logits")
        parts.append(g.add("gem.out", "weighted_sum", weights, *stack_outs))

    hs = add_static_nodes(g, "xs")
    parts.append(g.add("hs_t", "expand_time", hs, length=len(fct_index)))

    dec_in = g.add("dec.in", "concat", *parts, axis=-1)
    hidden = g.add("dec.h", "linear", dec_in, "dec.w0", "dec.b0")
    act = g.add("dec.a", "relu", hidden)
    return g.add("forecast", "linear", act, "dec.w1", "dec.b1")


def add_loss_nodes(g: ComputeGraph, forecast_name: str) -> str:
    """Summed pinball loss over observed cells.

    Reads inputs "targets", "q_lo" (q), "q_hi" (1 - q), and "cell_mask"
    (1 for observed targets, 0 for placeholders).
    """
    under = g.add("loss.under", "sub", "targets", forecast_name)
    under_pos = g.add("loss.under_pos", "relu", under)
    under_w = g.add("loss.under_w", "mul", "q_lo", under_pos)
    over = g.add("loss.over", "sub", forecast_name, "targets")
    over_pos = g.add("loss.over_pos", "relu", over)
    over_w = g.add("loss.over_w", "mul", "q_hi", over_pos)
    both = g.add("loss.sum", "add", under_w, over_w)
    masked = g.add("loss.masked", "mul", "cell_mask", both)
    return g.add("loss", "sum", masked)


def head_layout(horizons, quantiles):
    """Head column order is horizon-major: column h * Q + q."""
    q = np.asarray(quantiles, dtype=np.float64)
    q_lo = np.tile(q, len(horizons))
    return q_lo, 1.0 - q_lo


# ---------------------------------------------------------------------------
# operation surfaces


def encode_temporal(ds: TimeSeriesDataset, t: int, params: ParameterStore, cfg: EncoderConfig):
    """Encoder states at creation time t, one row per series.

    Strictly causal: row i depends only on series i's targets and covariates
    at times t - C .. t.
    """
    if t < ds.context_length:
        raise ValueError(f"creation time {t} is before the context length {ds.context_length}")
    if t >= ds.num_steps:
        raise ValueError(f"creation time {t} is outside the observed window")
    if cfg.past_reach > ds.context_length:
        raise ValueError(
            f"encoder reaches {cfg.past_reach} steps back, more than the context length {ds.context_length}"
        )
    g = ComputeGraph()
    out = add_encoder_nodes(g, cfg, "enc_in")
    col = g.add("h_t", "gather", out, axis=1, indices=np.array([t], dtype=np.int64))
    values = evaluate(g, {"enc_in": ds.encoder_input(t_limit=t + 1)}, params)
    return values[col].values[:, 0, :]


def encode_static(xs: np.ndarray, params: ParameterStore):
    """Row-independent static embedding through a single hidden layer."""
    g = ComputeGraph()
    out = add_static_nodes(g, "xs")
    return evaluate(g, {"xs": np.asarray(xs, dtype=np.float64)}, params)[out].values


def gcn_layer(h: np.ndarray, graph, w: np.ndarray, activation: str = "relu") -> np.ndarray:
    """One normalized aggregation pass followed by a linear map.

    ``graph`` is a SparseGraph or a SubgraphBatch; ``h`` must have one row per
    (extended) node. The rectifier applies unless ``activation="identity"``,
    used on the final layer of a stack.
    """
    h = np.asarray(h, dtype=np.float64)
    coeffs = gcn_coefficients(graph)
    n = coeffs.self_coeff.shape[0]
    if h.shape[0] != n:
        raise ValueError(f"embedding rows {h.shape[0]} do not match node count {n}")
    h2 = np.ascontiguousarray(h.reshape(n, -1))
    agg = _accel.edge_combine(coeffs.src, coeffs.dst, coeffs.coeff, coeffs.self_coeff, h2)
    out = agg.reshape(h.shape) @ w
    if activation == "relu":
        return np.maximum(out, 0.0)
    if activation == "identity":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def gem_forward(h: np.ndarray, subgraphs: list[SubgraphBatch], params: ParameterStore, cfg: GemConfig):
    """Seed-node ensemble output from R stacked aggregations over ``h``.

    ``h`` is indexed by global node id. Every batch must share one seed set;
    the per-stack outputs combine under softmax weights of ``gem.logits``.
    """
    if len(subgraphs) != cfg.num_graphs:
        raise ValueError(f"expected {cfg.num_graphs} subgraph batches, got {len(subgraphs)}")
    seeds = subgraphs[0].seeds
    for batch in subgraphs[1:]:
        if not np.array_equal(batch.seeds, seeds):
            raise ValueError("subgraph batches disagree on the seed set")
    h = np.asarray(h, dtype=np.float64)
    g = ComputeGraph()
    seed_rows = np.arange(seeds.size, dtype=np.int64)
    outs = []
    for r, batch in enumerate(subgraphs):
        rows = g.add(f"rows{r}", "gather", "h", axis=0, indices=batch.extended)
        stack = add_gcn_stack_nodes(g, cfg, rows, gcn_coefficients(batch), r)
        outs.append(g.add(f"seed{r}", "gather", stack, axis=0, indices=seed_rows))
    weights = g.add("weights", "softmax", "gem.logits")
    combined = g.add("combined", "weighted_sum", weights, *outs)
    return evaluate(g, {"h": h}, params)[combined].values


def decode(h_row: np.ndarray, g_row, hs_row: np.ndarray, params: ParameterStore):
    """Per-row forecasts from concatenated encoder, ensemble, and static states.

    ``g_row`` may be None for the graph-free variant. Output has one column
    per (horizon, quantile) head.
    """
    h_row = np.atleast_2d(np.asarray(h_row, dtype=np.float64))
    hs_row = np.atleast_2d(np.asarray(hs_row, dtype=np.float64))
    graph = ComputeGraph()
    names = ["h"]
    inputs = {"h": h_row, "hs": hs_row}
    if g_row is not None:
        inputs["g"] = np.atleast_2d(np.asarray(g_row, dtype=np.float64))
        names.append("g")
    names.append("hs")
    cat = graph.add("cat", "concat", *names, axis=-1)
    hid = graph.add("hid", "linear", cat, "dec.w0", "dec.b0")
    act = graph.add("act", "relu", hid)
    out = graph.add("out", "linear", act, "dec.w1", "dec.b1")
    return evaluate(graph, inputs, params)[out].values


def quantile_loss(d, f, q) -> float:
    """Pinball loss q * max(d - f, 0) + (1 - q) * max(f - d, 0)."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    d = np.asarray(d, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    out = q * np.maximum(d - f, 0.0) + (1.0 - q) * np.maximum(f - d, 0.0)
    return float(out) if out.ndim == 0 else out


def dataset_loss(ds: TimeSeriesDataset, fc: QuantileForecast) -> float:
    """Sum of pinball losses over every (series, time, horizon, quantile) cell."""
    max_h = max(fc.horizons)
    if fc.fct_times.size and fc.fct_times.max() + max_h >= ds.num_steps:
        raise ValueError(
            f"target at time {int(fc.fct_times.max()) + max_h} is missing from the dataset"
        )
    total = 0.0
    h_arr = np.asarray(fc.horizons, dtype=np.int64)
    cells = (fc.series[:, None, None], fc.fct_times[None, :, None] + h_arr[None, None, :])
    if not np.all(ds.observed[cells]):
        raise ValueError("a requested target is missing (series not yet launched)")
    targets = ds.y[cells]
    for qi, q in enumerate(fc.quantiles):
        total += float(np.sum(quantile_loss(targets, fc.values[:, :, :, qi], q)))
    return total


def build_batch_graph(cfg: ModelConfig, num_seeds, fct_index, subgraph_positions, agg_coeffs, with_loss):
    g = ComputeGraph()
    out = add_forward_nodes(g, cfg, num_seeds, fct_index, subgraph_positions, agg_coeffs)
    if with_loss:
        add_loss_nodes(g, out)
    return g


def forecast(ds: TimeSeriesDataset, params: ParameterStore, cfg: ModelConfig, graphs, fct_times):
    """Full-panel forecasts at the given creation times using full graphs."""
    from .graphs import full_batch  # local import to avoid cycles at module load

    fct_times = np.asarray(fct_times, dtype=np.int64)
    if fct_times.size == 0:
        raise ValueError("need at least one forecast creation time")
    if fct_times.min() < ds.context_length:
        raise ValueError("creation times start before the context length")
    if fct_times.max() >= ds.num_steps:
        raise ValueError("creation times run past the observed window")
    n = ds.num_series
    positions = None
    coeffs = None
    if cfg.gem is not None:
        if len(graphs) != cfg.gem.num_graphs:
            raise ValueError(f"expected {cfg.gem.num_graphs} graphs, got {len(graphs)}")
        batches = [full_batch(gr) for gr in graphs]
        positions = [b.extended for b in batches]
        coeffs = [gcn_coefficients(b) for b in batches]
    t_limit = int(fct_times.max()) + 1
    graph = build_batch_graph(cfg, n, fct_times, positions, coeffs, with_loss=False)
    inputs = {"enc_in": ds.encoder_input(t_limit=t_limit), "xs": ds.xs}
    values = evaluate(graph, inputs, params)
    heads = values["forecast"].values
    nq = len(ds.quantiles)
    nh = len(ds.horizons)
    shaped = heads.reshape(n, fct_times.size, nh, nq)
    return QuantileForecast(np.arange(n), fct_times, ds.horizons, ds.quantiles, shaped)
