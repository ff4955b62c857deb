"""Langevin-dynamics conditional sampling of null-hypothesis pseudo-samples.

For each conditioning row z_i, the chain starts at x_0 ~ N(0, I) and iterates

    x_{k+1} = x_k + h * s(x_k, z_i) + sqrt(2 h) * xi_k,    xi_k ~ N(0, I).

An ensemble holds ``num_sets`` independent such draws per row, all conditioned
on the same z matrix.  Each cell (set b, row i) consumes its own random stream
derived from (seed, b, key_i), so results are bit-reproducible regardless of
execution order or chunking, and one row's output never depends on the other
rows of z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from scipy.special import expit

from .errors import SamplingDivergedError
from .net import ScoreNet, forward_batch

__all__ = [
    "SamplerConfig",
    "NullEnsemble",
    "sample_conditional",
    "sample_with_trace",
]

ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Per-chunk noise buffer budget; cells are processed in chunks of whole rows.
_CHUNK_BYTES = 64 * 2**20


@dataclass(frozen=True)
class SamplerConfig:
    """Step size h, chain length, number of pseudo-sample sets and the seed."""

    step_size: float = 0.1
    steps: int = 200
    num_sets: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.num_sets < 1:
            raise ValueError("num_sets must be >= 1")


@dataclass
class NullEnsemble:
    """Generated sets, shape (num_sets, n, d_x), row-aligned with ``z_ref``."""

    sets: np.ndarray
    z_ref: np.ndarray

    @property
    def num_sets(self) -> int:
        return self.sets.shape[0]

    @property
    def n(self) -> int:
        return self.sets.shape[1]

    @property
    def d_x(self) -> int:
        return self.sets.shape[2]


def _as_score_fn(score: ScoreNet | ScoreFn, d_z: int) -> tuple[ScoreFn, int]:
    """Normalise a ScoreNet or a plain callable into (fn, d_x)."""
    if isinstance(score, ScoreNet):
        if score.config.d_z != d_z:
            raise ValueError(
                f"network expects d_z={score.config.d_z}, conditioning has {d_z}"
            )
        return (lambda x, z: forward_batch(score, x, z)), score.config.d_x
    return score, -1


def _make_drift(score: ScoreNet | ScoreFn, z_chunk: np.ndarray, d_x: int) -> ScoreFn:
    """Score evaluator specialised to one fixed conditioning chunk.

    For a ScoreNet the z-dependent part of the first layer is constant along
    the chain, so it is folded in once and the per-step work reuses
    preallocated buffers.  Plain callables are passed through.
    """
    if not isinstance(score, ScoreNet):
        return lambda x, _z=z_chunk: score(x, _z)

    rows = z_chunk.shape[0]
    h = score.config.hidden
    w1x = np.ascontiguousarray(score.w1[:, :d_x].T)
    z_part = z_chunk @ score.w1[:, d_x:].T + score.b1
    w2t = np.ascontiguousarray(score.w2.T)
    w3t = np.ascontiguousarray(score.w3.T)
    a1 = np.empty((rows, h))
    sig = np.empty((rows, h))
    a2 = np.empty((rows, h))

    def drift(x: np.ndarray, _z: np.ndarray) -> np.ndarray:
        np.matmul(x, w1x, out=a1)
        a1 += z_part
        expit(a1, out=sig)
        a1 *= sig  # a1 now holds swish(a1)
        np.matmul(a1, w2t, out=a2)
        a2 += score.b2
        expit(a2, out=sig)
        a2 *= sig
        s = a2 @ w3t
        s += score.b3
        return s

    return drift


def _cell_noise(seed: int, set_index: int, row_key: int, steps: int, d_x: int) -> np.ndarray:
    """Initial point and per-step noise for one chain, shape (steps + 1, d_x)."""
    rng = np.random.default_rng((seed, set_index, row_key))
    return rng.standard_normal((steps + 1, d_x))


def sample_conditional(
    score: ScoreNet | ScoreFn,
    z: np.ndarray,
    config: SamplerConfig,
    d_x: int | None = None,
    row_keys: Sequence[int] | None = None,
) -> NullEnsemble:
    """Generate ``config.num_sets`` pseudo-sample sets conditioned on the rows of z.

    ``score`` is either a trained :class:`ScoreNet` or any callable mapping
    batched ``(x, z)`` to score values; for a plain callable ``d_x`` must be
    given.  ``row_keys`` names the random stream of each row (default: the row
    index); carrying keys along with rows makes the output equivariant under
    row permutations.

    Raises
    ------
    SamplingDivergedError
        If an iterate becomes non-finite, reporting (set, row, step).
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("z must be a 2-d matrix")
    n = z.shape[0]
    fn, net_dx = _as_score_fn(score, z.shape[1])
    if net_dx > 0:
        if d_x is not None and d_x != net_dx:
            raise ValueError(f"d_x={d_x} conflicts with network d_x={net_dx}")
        d_x = net_dx
    if d_x is None:
        raise ValueError("d_x is required when score is a plain callable")
    keys = np.arange(n) if row_keys is None else np.asarray(row_keys, dtype=np.int64)
    if keys.shape != (n,):
        raise ValueError("row_keys must provide one key per row of z")

    h = config.step_size
    noise_scale = np.sqrt(2.0 * h)
    out = np.empty((config.num_sets, n, d_x))

    cell_bytes = (config.steps + 1) * d_x * 8
    rows_per_chunk = max(1, _CHUNK_BYTES // cell_bytes)
    for b in range(config.num_sets):
        for start in range(0, n, rows_per_chunk):
            stop = min(start + rows_per_chunk, n)
            rows = stop - start
            noise = np.empty((config.steps + 1, rows, d_x))
            for j in range(rows):
                noise[:, j, :] = _cell_noise(
                    config.seed, b, int(keys[start + j]), config.steps, d_x
                )
            noise[1:] *= noise_scale
            drift = _make_drift(score, z[start:stop], d_x)
            x = noise[0].copy()
            for k in range(config.steps):
                x += h * drift(x, z[start:stop])
                x += noise[k + 1]
                if not np.all(np.isfinite(x)):
                    bad = np.argwhere(~np.isfinite(x))[0]
                    raise SamplingDivergedError(
                        f"non-finite iterate at set {b}, row {start + int(bad[0])}, "
                        f"step {k + 1}; consider a smaller step size than {h}"
                    )
            out[b, start:stop] = x
    return NullEnsemble(sets=out, z_ref=z)


def sample_with_trace(
    score: ScoreNet | ScoreFn,
    z_row: np.ndarray,
    config: SamplerConfig,
    d_x: int | None = None,
    set_index: int = 0,
    row_key: int = 0,
) -> np.ndarray:
    """Full trajectory (steps + 1 points) of one chain, for diagnostics.

    With matching (set_index, row_key) the chain consumes the same noise
    stream as the corresponding :func:`sample_conditional` cell, so the final
    point reproduces that cell up to floating-point reduction order.
    """
    z_row = np.atleast_1d(np.asarray(z_row, dtype=np.float64))
    _, net_dx = _as_score_fn(score, z_row.shape[0])
    if net_dx > 0:
        d_x = net_dx
    if d_x is None:
        raise ValueError("d_x is required when score is a plain callable")

    h = config.step_size
    noise_scale = np.sqrt(2.0 * h)
    noise = _cell_noise(config.seed, set_index, row_key, config.steps, d_x)
    z_batch = z_row[None, :]
    drift = _make_drift(score, z_batch, d_x)
    trajectory = np.empty((config.steps + 1, d_x))
    trajectory[0] = noise[0]
    x = trajectory[0][None, :].copy()
    for k in range(config.steps):
        x = x + h * drift(x, z_batch) + noise_scale * noise[k + 1]
        if not np.all(np.isfinite(x)):
            raise SamplingDivergedError(
                f"non-finite iterate at set {set_index}, row {row_key}, "
                f"step {k + 1}; consider a smaller step size than {h}"
            )
        trajectory[k + 1] = x[0]
    return trajectory
