"""Training of the conditional score network.

Minimises the batch estimate of the sliced objective with Adam.  Includes the
logit preprocessing applied to the modelled variable and the Gaussian
projection sampler used to draw slicing directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergedError
from .net import NetConfig, ScoreNet, init_net, loss_grad
from .seeding import derive_seeds

__all__ = [
    "TrainConfig",
    "Preprocessor",
    "ProjectionSampler",
    "AdamState",
    "adam_step",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyperparameters.

    ``m`` is the number of slicing directions drawn per sample; rows are
    replicated ``m`` times within each batch with independent directions.
    ``hidden`` sizes the score network built by :func:`train`.
    """

    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 50
    m: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1 or self.m < 1 or self.hidden < 1:
            raise ValueError("batch_size, m and hidden must be positive")


@dataclass(frozen=True)
class Preprocessor:
    """Per-column map onto the real line: affine rescale into [eps, 1-eps], then logit.

    The fitted column range [min, max] is mapped onto [eps, 1-eps], so the
    transform is finite and exactly invertible on all fitted values.  Values
    outside the fitted range (new data) are clipped to the same band before
    the logit.
    """

    mins: np.ndarray
    maxs: np.ndarray
    eps: float = 1e-5

    @classmethod
    def fit(cls, data: np.ndarray, eps: float = 1e-5) -> "Preprocessor":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ValueError("need a 2-d array with at least 2 rows to fit")
        mins = data.min(axis=0)
        maxs = data.max(axis=0)
        constant = np.flatnonzero(mins == maxs)
        if constant.size:
            raise ValueError(
                f"column {int(constant[0])} is constant; cannot rescale a "
                "degenerate column"
            )
        return cls(mins=mins, maxs=maxs, eps=eps)

    def transform(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        unit = (data - self.mins) / (self.maxs - self.mins)
        u = np.clip(self.eps + (1.0 - 2.0 * self.eps) * unit, self.eps, 1.0 - self.eps)
        return np.log(u) - np.log1p(-u)

    def inverse(self, data: np.ndarray) -> np.ndarray:
        u = 1.0 / (1.0 + np.exp(-np.asarray(data, dtype=np.float64)))
        unit = (u - self.eps) / (1.0 - 2.0 * self.eps)
        return self.mins + unit * (self.maxs - self.mins)


@dataclass
class ProjectionSampler:
    """Standard-normal slicing directions of dimension ``d_x``, drawn from a seed."""

    d_x: int
    seed: int

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)

    def draw(self, count: int) -> np.ndarray:
        return self._rng.standard_normal((count, self.d_x))


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update with bias correction; returns new params and state."""
    if len(params) != len(grads):
        raise ValueError("params and grads must have the same length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + eps))
    return new_p, AdamState(m=new_m, v=new_v, t=t)


def train(
    x_data: np.ndarray,
    z_data: np.ndarray,
    config: TrainConfig,
) -> tuple[ScoreNet, list[float]]:
    """Fit the score network on row-paired (x, z) data.

    The caller is responsible for any preprocessing of ``x_data``.  Each epoch
    reshuffles the sample order and steps through ceil(n / batch_size)
    mini-batches; every batch row receives ``m`` fresh slicing directions.
    Returns the trained network and the per-epoch mean loss trace.  The whole
    run is a deterministic function of (data, config).

    Raises
    ------
    TrainingDivergedError
        If the loss becomes non-finite, reporting the failing step.
    """
    x_data = np.ascontiguousarray(x_data, dtype=np.float64)
    z_data = np.ascontiguousarray(z_data, dtype=np.float64)
    if x_data.ndim != 2 or z_data.ndim != 2 or x_data.shape[0] != z_data.shape[0]:
        raise ValueError("x_data and z_data must be 2-d with equal row counts")
    n, d_x = x_data.shape
    d_z = z_data.shape[1]
    if n < config.batch_size:
        raise ValueError(f"need at least batch_size={config.batch_size} rows, got {n}")

    init_seed, shuffle_seed, proj_seed = derive_seeds(config.seed, 3)
    net = init_net(NetConfig(d_x=d_x, d_z=d_z, hidden=config.hidden), seed=init_seed)
    if config.epochs == 0:
        return net, []

    shuffle_rng = np.random.default_rng(shuffle_seed)
    projections = ProjectionSampler(d_x=d_x, seed=proj_seed)

    params = [p.copy() for p in net.parameters()]
    state = AdamState.zeros_like(params)
    work = ScoreNet(net.config, *params)
    n_batches = -(-n // config.batch_size)
    trace: list[float] = []
    step = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for k in range(n_batches):
            idx = order[k * config.batch_size : (k + 1) * config.batch_size]
            if config.m > 1:
                idx = np.repeat(idx, config.m)
            v = projections.draw(len(idx))
            step += 1
            try:
                loss, grads = loss_grad(work, x_data[idx], z_data[idx], v)
            except FloatingPointError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (loss={loss!r})"
                )
            epoch_loss += loss
            params, state = adam_step(
                params,
                grads,
                state,
                learning_rate=config.learning_rate,
                beta1=config.adam_beta1,
                beta2=config.adam_beta2,
                eps=config.adam_eps,
            )
            work = ScoreNet(net.config, *params)
        trace.append(epoch_loss / n_batches)
    return work, trace
