"""Conditional score network: a fixed 3-layer Swish MLP with exact derivatives.

The model s(x, z) maps the concatenated input [x; z] through two Swish-activated
hidden layers to a d_x-dimensional score estimate.  Besides plain evaluation,
this module provides

* ``forward_tangent`` -- the exact directional derivative (d/d eps) s(x + eps*v, z)
  obtained by propagating a tangent alongside the primal pass, and
* ``loss_grad`` -- the sliced objective  mean_i [ v_i . jvp_i + 0.5 (v_i . s_i)^2 ]
  together with its exact parameter gradient, computed by reverse-mode
  accumulation through both the primal and the tangent pass (this is where the
  second derivative of Swish enters).

All arithmetic is float64.  Networks are treated as immutable after
construction; every function here is a pure function of its arguments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "NetConfig",
    "ScoreNet",
    "TangentOutput",
    "init_net",
    "forward",
    "forward_batch",
    "forward_tangent",
    "forward_tangent_batch",
    "loss_grad",
    "sliced_objective_terms",
    "save_net",
    "load_net",
]

_MAGIC = b"SCORENET"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture dimensions: input is [x; z], output has the size of x."""

    d_x: int
    d_z: int
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.d_x < 1:
            raise ValueError(f"d_x must be >= 1, got {self.d_x}")
        if self.d_z < 0:
            raise ValueError(f"d_z must be >= 0, got {self.d_z}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")

    @property
    def d_in(self) -> int:
        return self.d_x + self.d_z

    @property
    def n_params(self) -> int:
        h = self.hidden
        return (self.d_in + 1) * h + (h + 1) * h + (h + 1) * self.d_x


@dataclass
class ScoreNet:
    """Three affine layers; Swish after layers 1 and 2, identity after layer 3.

    Weight matrices are stored as (fan_out, fan_in); the forward pass uses
    ``row_batch @ W.T + b``.  Instances should not be mutated after creation.
    """

    config: NetConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        """Parameters in fixed layer order (w1, b1, w2, b2, w3, b3)."""
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def score(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Batched evaluation; rows of ``x`` and ``z`` are paired."""
        return forward_batch(self, x, z)


@dataclass(frozen=True)
class TangentOutput:
    """Score value and the Jacobian-vector product (ds/dx) v at one input."""

    s: np.ndarray
    jvp: np.ndarray


def _swish(a: np.ndarray) -> np.ndarray:
    return a * expit(a)


def _swish_d1(a: np.ndarray) -> np.ndarray:
    sig = expit(a)
    return sig * (1.0 + a * (1.0 - sig))


def _swish_d2(a: np.ndarray) -> np.ndarray:
    sig = expit(a)
    return sig * (1.0 - sig) * (2.0 + a * (1.0 - 2.0 * sig))


def init_net(config: NetConfig, seed: int) -> ScoreNet:
    """Initialise weights uniformly in +-1/sqrt(fan_in); biases start at zero."""
    rng = np.random.default_rng(seed)

    def draw(fan_out: int, fan_in: int) -> np.ndarray:
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=(fan_out, fan_in))

    h = config.hidden
    return ScoreNet(
        config=config,
        w1=draw(h, config.d_in),
        b1=np.zeros(h),
        w2=draw(h, h),
        b2=np.zeros(h),
        w3=draw(config.d_x, h),
        b3=np.zeros(config.d_x),
    )


def _check_batch(net: ScoreNet, x: np.ndarray, z: np.ndarray) -> None:
    cfg = net.config
    if x.ndim != 2 or z.ndim != 2 or x.shape[0] != z.shape[0]:
        raise ValueError(f"expected paired 2-d batches, got x{x.shape}, z{z.shape}")
    if x.shape[1] != cfg.d_x or z.shape[1] != cfg.d_z:
        raise ValueError(
            f"dimension mismatch: net expects d_x={cfg.d_x}, d_z={cfg.d_z}, "
            f"got x{x.shape}, z{z.shape}"
        )


def forward_batch(net: ScoreNet, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Evaluate s(x, z) for a batch of row-paired inputs, shape (n, d_x)."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_batch(net, x, z)
    u = np.hstack([x, z]) if net.config.d_z > 0 else x
    g1 = _swish(u @ net.w1.T + net.b1)
    g2 = _swish(g1 @ net.w2.T + net.b2)
    return g2 @ net.w3.T + net.b3


def forward(net: ScoreNet, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Evaluate s(x, z) for a single input pair of vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    return forward_batch(net, x[None, :], z[None, :])[0]


def forward_tangent_batch(
    net: ScoreNet, x: np.ndarray, z: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched primal values and exact JVPs (ds/dx) v; z carries zero tangent."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_batch(net, x, z)
    if v.shape != x.shape:
        raise ValueError(f"direction shape {v.shape} does not match x shape {x.shape}")
    s, jvp, _ = _tangent_pass(net, x, z, v)
    return s, jvp


def forward_tangent(
    net: ScoreNet, x: np.ndarray, z: np.ndarray, v: np.ndarray
) -> TangentOutput:
    """Score and JVP for one input: jvp = d/d eps s(x + eps*v, z) at eps = 0."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    s, jvp = forward_tangent_batch(net, x[None, :], z[None, :], v[None, :])
    return TangentOutput(s=s[0], jvp=jvp[0])


def _tangent_pass(net: ScoreNet, x: np.ndarray, z: np.ndarray, v: np.ndarray):
    """Primal + tangent forward pass, returning every intermediate for reuse."""
    if net.config.d_z > 0:
        u = np.hstack([x, z])
        ud = np.hstack([v, np.zeros_like(z)])
    else:
        u, ud = x, v
    a1 = u @ net.w1.T + net.b1
    g1 = _swish(a1)
    ad1 = ud @ net.w1.T
    d1 = _swish_d1(a1)
    gd1 = d1 * ad1

    a2 = g1 @ net.w2.T + net.b2
    g2 = _swish(a2)
    ad2 = gd1 @ net.w2.T
    d2 = _swish_d1(a2)
    gd2 = d2 * ad2

    s = g2 @ net.w3.T + net.b3
    sd = gd2 @ net.w3.T
    cache = (u, ud, a1, g1, ad1, gd1, d1, a2, g2, ad2, gd2, d2)
    return s, sd, cache


def sliced_objective_terms(
    s: np.ndarray, jvp: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Per-row objective values  v . jvp + 0.5 (v . s)^2  for row-paired inputs."""
    s = np.atleast_2d(s)
    jvp = np.atleast_2d(jvp)
    v = np.atleast_2d(v)
    return np.sum(v * jvp, axis=1) + 0.5 * np.sum(v * s, axis=1) ** 2


def loss_grad(
    net: ScoreNet, x: np.ndarray, z: np.ndarray, v: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Batch-mean sliced objective and its exact parameter gradient.

    The objective per row is ``v . (ds/dx) v + 0.5 (v . s)^2``; the returned
    gradient differentiates the mean of those terms with respect to every
    parameter.  Because the objective contains the tangent of the network, the
    reverse sweep also flows through the tangent chain, which contributes the
    second-derivative terms of the activation.

    Raises
    ------
    ValueError
        On an empty batch or mismatched shapes.
    FloatingPointError
        If the loss or any gradient entry is non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-d array")
    _check_batch(net, x, z)
    if v.shape != x.shape:
        raise ValueError(f"direction shape {v.shape} does not match x shape {x.shape}")

    s, sd, cache = _tangent_pass(net, x, z, v)
    u, ud, a1, g1, ad1, gd1, d1, a2, g2, ad2, gd2, d2 = cache
    b = x.shape[0]

    vs = np.sum(v * s, axis=1)
    loss = float(np.mean(np.sum(v * sd, axis=1) + 0.5 * vs**2))

    # Reverse sweep, seeded with d(loss)/d(sd) and d(loss)/d(s); the 1/b of the
    # batch mean is folded into the seeds.
    dsd = v / b
    ds = (vs[:, None] * v) / b

    gw3 = dsd.T @ gd2 + ds.T @ g2
    gb3 = ds.sum(axis=0)
    dgd2 = dsd @ net.w3
    dg2 = ds @ net.w3

    dad2 = d2 * dgd2
    da2 = _swish_d2(a2) * ad2 * dgd2 + d2 * dg2

    gw2 = dad2.T @ gd1 + da2.T @ g1
    gb2 = da2.sum(axis=0)
    dgd1 = dad2 @ net.w2
    dg1 = da2 @ net.w2

    dad1 = d1 * dgd1
    da1 = _swish_d2(a1) * ad1 * dgd1 + d1 * dg1

    gw1 = dad1.T @ ud + da1.T @ u
    gb1 = da1.sum(axis=0)

    grads = [gw1, gb1, gw2, gb2, gw3, gb3]
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError(f"non-finite loss or gradient (loss={loss!r})")
    return loss, grads


def save_net(net: ScoreNet, path: str) -> None:
    """Serialise config + parameters to a versioned binary file, bit-exactly."""
    header = json.dumps(
        {
            "version": _FORMAT_VERSION,
            "d_x": net.config.d_x,
            "d_z": net.config.d_z,
            "hidden": net.config.hidden,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_net(path: str) -> ScoreNet:
    """Load a network saved by :func:`save_net`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a score-network file (bad magic header)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != _FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported format version {header.get('version')!r}"
            )
        config = NetConfig(d_x=header["d_x"], d_z=header["d_z"], hidden=header["hidden"])
        h = config.hidden
        shapes = [
            (h, config.d_in),
            (h,),
            (h, h),
            (h,),
            (config.d_x, h),
            (config.d_x,),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated parameter block")
            arrays.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
    return ScoreNet(config, *arrays)
