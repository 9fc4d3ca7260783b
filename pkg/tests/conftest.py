import numpy as np
import pytest

from geann import (
    EncoderConfig,
    GemConfig,
    ModelConfig,
    TimeSeriesDataset,
    init_parameters,
    random_graph,
)


def toy_dataset(n=20, t=40, d=2, m_s=2, seed=11, horizons=(1, 2), quantiles=(0.5, 0.9), context=8):
    rng = np.random.default_rng(seed)
    return TimeSeriesDataset(
        y=np.maximum(rng.normal(5.0, 2.0, size=(n, t)), 0.0),
        xt=rng.normal(size=(n, t, d)),
        xs=rng.normal(size=(n, m_s)),
        context_length=context,
        horizons=horizons,
        quantiles=quantiles,
    )


def toy_model(num_graphs=2):
    gem = None
    if num_graphs:
        gem = GemConfig(num_graphs=num_graphs, num_layers=2, hidden_width=8, out_width=8)
    return ModelConfig(
        encoder=EncoderConfig(kernel_size=2, dilations=(1, 2, 4), channels=(8, 8, 8)),
        gem=gem,
        static_hidden=4,
        static_width=4,
        decoder_hidden=8,
    )


def toy_params(model, ds, seed=0):
    return init_parameters(
        model,
        in_channels=1 + ds.num_time_covariates,
        num_static=ds.num_static_covariates,
        num_heads=len(ds.horizons) * len(ds.quantiles),
        seed=seed,
    )


@pytest.fixture
def small_dataset():
    return toy_dataset()


@pytest.fixture
def toy_graphs():
    return [random_graph(20, 3, seed=1), random_graph(20, 3, seed=2)]
