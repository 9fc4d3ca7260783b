"""Panel dataset for multi-horizon quantile forecasting, plus its file format.

Container layout (all integers little-endian int64, reals little-endian
float64, arrays row-major):

    bytes 0..7   magic b"GEANN-DS"
    int64        format version (1)
    int64 x 4    N, T, d, m_s
    int64        context length
    int64 x 2    number of horizons, number of quantiles
    int64 x H    horizon offsets
    float64 x Q  quantile levels
    float64      targets Y, N*T values
    float64      time covariates Xt, N*T*d values
    float64      static covariates Xs, N*m_s values
    uint8        observedness of Y, N*T values (1 = target defined)

Entries of Y with observedness 0 are placeholders (a series not yet
launched); they never enter a training objective or evaluation aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAGIC = b"GEANN-DS"
_VERSION = 1


@dataclass
class TimeSeriesDataset:
    """Targets, covariates, and the forecasting index sets.

    y is (N, T), xt is (N, T, d), xs is (N, m_s). Forecasts issued at time t
    condition on observations up to and including t and predict the targets
    at t + h for each horizon h.
    """

    y: np.ndarray
    xt: np.ndarray
    xs: np.ndarray
    context_length: int
    horizons: tuple[int, ...]
    quantiles: tuple[float, ...]
    observed: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.xt = np.asarray(self.xt, dtype=np.float64)
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.horizons = tuple(int(h) for h in self.horizons)
        self.quantiles = tuple(float(q) for q in self.quantiles)
        if self.y.ndim != 2:
            raise ValueError(f"targets must be (N, T), got {self.y.shape}")
        n, t = self.y.shape
        if self.observed is None:
            self.observed = np.ones((n, t), dtype=bool)
        else:
            self.observed = np.asarray(self.observed, dtype=bool)
            if self.observed.shape != (n, t):
                raise ValueError(f"observedness must be (N, T), got {self.observed.shape}")
        if self.xt.ndim != 3 or self.xt.shape[:2] != (n, t):
            raise ValueError(f"time covariates must be (N, T, d), got {self.xt.shape}")
        if self.xs.ndim != 2 or self.xs.shape[0] != n:
            raise ValueError(f"static covariates must be (N, m_s), got {self.xs.shape}")
        if self.context_length < 1:
            raise ValueError(f"context length must be >= 1, got {self.context_length}")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be positive offsets")
        if list(self.horizons) != sorted(set(self.horizons)):
            raise ValueError("horizons must be strictly increasing")
        qs = list(self.quantiles)
        if not qs or qs != sorted(set(qs)) or qs[0] <= 0.0 or qs[-1] >= 1.0:
            raise ValueError("quantiles must be strictly increasing within (0, 1)")

    @property
    def num_series(self) -> int:
        return self.y.shape[0]

    @property
    def num_steps(self) -> int:
        return self.y.shape[1]

    @property
    def num_time_covariates(self) -> int:
        return self.xt.shape[2]

    @property
    def num_static_covariates(self) -> int:
        return self.xs.shape[1]

    def encoder_input(self, rows=None, t_limit=None) -> np.ndarray:
        """Stack targets and time covariates into (rows, t_limit, 1 + d)."""
        t_limit = self.num_steps if t_limit is None else t_limit
        y = self.y if rows is None else self.y[rows]
        xt = self.xt if rows is None else self.xt[rows]
        return np.concatenate([y[:, :t_limit, None], xt[:, :t_limit, :]], axis=2)


def save_dataset(ds: TimeSeriesDataset, path) -> None:
    n, t = ds.y.shape
    d = ds.num_time_covariates
    ms = ds.num_static_covariates
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        header = np.array(
            [_VERSION, n, t, d, ms, ds.context_length, len(ds.horizons), len(ds.quantiles)],
            dtype="<i8",
        )
        header.tofile(fh)
        np.asarray(ds.horizons, dtype="<i8").tofile(fh)
        np.asarray(ds.quantiles, dtype="<f8").tofile(fh)
        np.ascontiguousarray(ds.y, dtype="<f8").tofile(fh)
        np.ascontiguousarray(ds.xt, dtype="<f8").tofile(fh)
        np.ascontiguousarray(ds.xs, dtype="<f8").tofile(fh)
        np.ascontiguousarray(ds.observed, dtype="u1").tofile(fh)


def load_dataset(path) -> TimeSeriesDataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a GEANN dataset container")
        header = np.fromfile(fh, dtype="<i8", count=8)
        if header.size != 8 or header[0] != _VERSION:
            raise ValueError(f"{path}: unsupported container version")
        _, n, t, d, ms, context, nh, nq = (int(v) for v in header)
        horizons = np.fromfile(fh, dtype="<i8", count=nh)
        quantiles = np.fromfile(fh, dtype="<f8", count=nq)
        y = np.fromfile(fh, dtype="<f8", count=n * t).reshape(n, t)
        xt = np.fromfile(fh, dtype="<f8", count=n * t * d).reshape(n, t, d)
        xs = np.fromfile(fh, dtype="<f8", count=n * ms).reshape(n, ms)
        observed = np.fromfile(fh, dtype="u1", count=n * t)
        if observed.size != n * t:
            raise ValueError(f"{path}: truncated container")
    return TimeSeriesDataset(
        y=y,
        xt=xt,
        xs=xs,
        context_length=context,
        horizons=tuple(horizons.tolist()),
        quantiles=tuple(quantiles.tolist()),
        observed=observed.reshape(n, t).astype(bool),
    )
