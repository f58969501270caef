"""Multi-SSM layers, the encoder/decoder forecasting network, and closed-loop forecasting.

Layout of a forecasting network (widths configurable)::

    encoder      m -> s   repeated identity (or a linear map)
    layers[0]    s SSMs   frozen differencing / MA-residual filters (optional)
    layers[1:]   s SSMs   companion SSMs computed as convolutions, optional FFN
    decoder      s SSMs   closed-loop companion SSMs (each carries K)
    readout      s -> m   per-timestep linear map

Every open-loop SSM channel produces ``y_k = C x_{k+1} + D u_k``. Decoder
channels produce ``C x_{k+1}`` (no skip) in both open- and closed-loop mode,
so the two modes agree whenever K predicts the decoder inputs exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
from scipy.special import erf

from . import constructions
from .core import Ssm, normalize_stability, step
from .errors import DimensionError, MissingFeedbackError
from .filters import PlanCache, closed_loop_rollout, default_cache, fast_closed_loop_rollout, last_state

SCHEMA = "companion-ssm.network/v1"


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


@dataclass(frozen=True, eq=False)
class Ffn:
    """Position-wise ``gelu(y W1 + b1) W2 + b2`` across channels."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __call__(self, y):
        # y: s x ell
        hidden = gelu(y.T @ self.W1 + self.b1)
        return (hidden @ self.W2 + self.b2).T

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("W1", "b1", "W2", "b2")}

    @classmethod
    def from_dict(cls, data):
        return cls(*(np.asarray(data[k], dtype=np.float64) for k in ("W1", "b1", "W2", "b2")))


@dataclass(frozen=True, eq=False)
class MultiSsmLayer:
    ssms: tuple
    ffn: Optional[Ffn] = None
    frozen: bool = False

    def __post_init__(self):
        ssms = tuple(self.ssms)
        if not ssms:
            raise ValueError("a layer needs at least one SSM")
        if len({s.d for s in ssms}) != 1:
            raise DimensionError("all SSMs in a layer must share d")
        object.__setattr__(self, "ssms", ssms)
        if self.ffn is not None:
            s = len(ssms)
            if self.ffn.W1.shape[0] != s or self.ffn.W2.shape[1] != s or self.ffn.W1.shape[1] < 1:
                raise DimensionError(f"FFN shapes do not match {s} channels")

    @property
    def width(self) -> int:
        return len(self.ssms)

    @property
    def skip(self) -> np.ndarray:
        return np.array([s.D for s in self.ssms])

    def to_dict(self):
        out = {
            "ssms": [s.to_dict() for s in self.ssms],
            "skip": self.skip.tolist(),
            "frozen": self.frozen,
        }
        if self.ffn is not None:
            out["ffn"] = self.ffn.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        ssms = [Ssm.from_dict(s) for s in data["ssms"]]
        if "skip" in data:
            ssms = [s.replace(D=float(D)) for s, D in zip(ssms, data["skip"], strict=True)]
        ffn = Ffn.from_dict(data["ffn"]) if data.get("ffn") else None
        return cls(tuple(ssms), ffn, bool(data.get("frozen", False)))


@dataclass(frozen=True, eq=False)
class Network:
    encoder: np.ndarray  # s x m
    layers: tuple
    decoder: MultiSsmLayer
    readout: np.ndarray  # m x s
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        encoder = np.asarray(self.encoder, dtype=np.float64)
        readout = np.asarray(self.readout, dtype=np.float64)
        object.__setattr__(self, "encoder", encoder)
        object.__setattr__(self, "readout", readout)
        object.__setattr__(self, "layers", tuple(self.layers))
        width = encoder.shape[0]
        for i, layer in enumerate(self.layers + (self.decoder,)):
            if layer.width != width:
                raise DimensionError(f"layer {i} has {layer.width} channels, expected {width}")
        if readout.shape != (encoder.shape[1], width):
            raise DimensionError(f"readout must be {encoder.shape[1]}x{width}, got {readout.shape}")

    @property
    def m(self) -> int:
        return self.encoder.shape[1]

    @property
    def s(self) -> int:
        return self.encoder.shape[0]

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "encoder": {"W": self.encoder.tolist()},
            "layers": [layer.to_dict() for layer in self.layers],
            "decoder": self.decoder.to_dict(),
            "readout": self.readout.tolist(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != SCHEMA:
            raise ValueError(f"unsupported network schema {data.get('schema')!r}; expected {SCHEMA!r}")
        return cls(
            np.asarray(data["encoder"]["W"], dtype=np.float64),
            tuple(MultiSsmLayer.from_dict(layer) for layer in data["layers"]),
            MultiSsmLayer.from_dict(data["decoder"]),
            np.asarray(data["readout"], dtype=np.float64),
            dict(data.get("config", {})),
        )

    @classmethod
    def single(cls, ssm: Ssm) -> "Network":
        """Degenerate network: one decoder SSM on one feature, identity encoder/readout."""
        return cls(np.ones((1, 1)), (), MultiSsmLayer((ssm,)), np.ones((1, 1)))


def _check_input(u, width):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :]
    if u.ndim != 2 or u.shape[0] != width:
        raise DimensionError(f"expected {width} x ell input, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("layer input has non-finite entries")
    return u


def _map_channels(fn, n, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def layer_forward(layer: MultiSsmLayer, u, cache: PlanCache = default_cache, workers: int = 1, skip=True):
    """Run every channel as a convolution, add the skip, then the optional FFN.

    ``skip=False`` drops the ``D u`` term (decoder channels).
    """
    u = _check_input(u, layer.width)
    ell = u.shape[1]

    def channel(i):
        ssm = layer.ssms[i]
        y = cache.get(ssm, ell).apply(u[i])
        return y + ssm.D * u[i] if skip else y

    y = np.stack(_map_channels(channel, layer.width, workers))
    if layer.ffn is not None:
        y = layer.ffn(y)
    return y


def layer_scan(layer: MultiSsmLayer, u, skip=True):
    """Step-by-step recurrent evaluation of a layer; the oracle for :func:`layer_forward`."""
    u = _check_input(u, layer.width)
    y = np.empty_like(u)
    for i, ssm in enumerate(layer.ssms):
        x = np.zeros(ssm.d)
        for k, uk in enumerate(u[i]):
            x, _, y_post = step(ssm, x, uk)
            y[i, k] = y_post + (ssm.D * uk if skip else 0.0)
    if layer.ffn is not None:
        y = layer.ffn(y)
    return y


def encode(net: Network, u):
    u = _check_input(u, net.m)
    return net.encoder @ u


def decoder_inputs(net: Network, u, cache: PlanCache = default_cache, workers: int = 1):
    """Encoder plus every open-loop layer: the sequence fed to the decoder, ``s x ell``."""
    z = encode(net, u)
    for layer in net.layers:
        z = layer_forward(layer, z, cache, workers)
    return z


def open_loop_forward(net: Network, u, cache: PlanCache = default_cache, workers: int = 1):
    """Next-step predictions over the lag window: column k predicts ``u[:, k+1]``."""
    z = decoder_inputs(net, u, cache, workers)
    y = layer_forward(net.decoder, z, cache, workers, skip=False)
    return net.readout @ y


def scan_forward(net: Network, u):
    """Pure recurrent evaluation of :func:`open_loop_forward` (no FFT anywhere)."""
    z = encode(net, u)
    for layer in net.layers:
        z = layer_scan(layer, z)
    return net.readout @ layer_scan(net.decoder, z, skip=False)


def forecast(net: Network, u, h: int, fast: bool = False, cache: PlanCache = default_cache, workers: int = 1):
    """Forecast ``h`` steps past the lag window ``u`` (``m x ell``), returns ``m x h``.

    Each decoder channel consumes its input to reach ``x_ell``; step i of the
    forecast is ``C (A + B K)^i x_ell`` for ``i = 0..h-1``.
    """
    if h < 1:
        raise ValueError("horizon h must be >= 1")
    if h > 1 and any(s.K is None for s in net.decoder.ssms):
        raise MissingFeedbackError("every decoder SSM needs K to forecast more than one step")
    z = decoder_inputs(net, u, cache, workers)
    rollout = fast_closed_loop_rollout if fast else (lambda s, x, n: closed_loop_rollout(s, x, n)[0])

    def channel(i):
        ssm = net.decoder.ssms[i]
        x = last_state(ssm, z[i])
        out = np.empty(h)
        out[0] = ssm.C @ x
        if h > 1:
            out[1:] = rollout(ssm, x, h - 1)
        return out

    y = np.stack(_map_channels(channel, net.s, workers))
    return net.readout @ y


@dataclass
class NetworkConfig:
    m: int = 1
    s: int = 8
    d: int = 16
    ell: int = 96
    h: int = 24
    n_diff: int = 0
    n_ma: int = 0
    n_open_layers: int = 1
    ffn: bool = False
    encoder: str = "repeat"
    seed: int = 0
    ma_min_order: int = 4

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def repeat_encoder(m: int, s: int) -> np.ndarray:
    W = np.zeros((s, m))
    W[np.arange(s), np.arange(s) % m] = 1.0
    return W


def grouped_readout(m: int, s: int) -> np.ndarray:
    """Average the channels that replicate each feature (inverse of the repeat encoder)."""
    R = repeat_encoder(m, s).T
    return R / R.sum(axis=1, keepdims=True)


def _random_companion(rng, d, with_k=False, D=0.0):
    a = normalize_stability(rng.normal(0.0, 1.0 / d, size=d))
    B = rng.normal(0.0, 1.0 / np.sqrt(d), size=d)
    C = rng.normal(0.0, 1.0 / np.sqrt(d), size=d)
    K = rng.normal(0.0, 1.0 / np.sqrt(d), size=d) if with_k else None
    return Ssm.from_arrays(a, B, C, D, K)


def preprocessing_layer(n_diff: int, n_ma: int, d: int, rng, ma_min_order: int = 4) -> MultiSsmLayer:
    """Frozen layer: differencing orders cycling 0,1,2,3 then MA-residual filters of random order."""
    ssms = []
    for i in range(n_diff):
        order = min(i % 4, d - 1)
        ssms.append(constructions.shift_ssm(constructions.diff_c_vector(order, d)))
    lo = min(max(2, ma_min_order), d)
    for _ in range(n_ma):
        n = int(rng.integers(lo, d + 1))
        ssms.append(constructions.shift_ssm(constructions.ma_residual_c(n, d)))
    return MultiSsmLayer(tuple(ssms), frozen=True)


def build_forecast_network(config) -> Network:
    """Construct the forecasting layout at the configured widths, deterministic per seed."""
    if isinstance(config, dict):
        config = NetworkConfig.from_dict(config)
    c = config
    if min(c.m, c.s, c.d) < 1:
        raise ValueError("m, s and d must be >= 1")
    if c.s < c.m:
        raise DimensionError(f"s={c.s} channels cannot carry m={c.m} features")
    if (c.n_diff or c.n_ma) and c.n_diff + c.n_ma != c.s:
        raise DimensionError(f"preprocessing split {c.n_diff}+{c.n_ma} != s={c.s}")
    rng = np.random.default_rng(c.seed)
    if c.encoder == "repeat":
        encoder = repeat_encoder(c.m, c.s)
    elif c.encoder == "linear":
        encoder = rng.normal(0.0, 1.0 / np.sqrt(c.m), size=(c.s, c.m))
    else:
        raise ValueError(f"unknown encoder {c.encoder!r}")
    layers = []
    if c.n_diff or c.n_ma:
        layers.append(preprocessing_layer(c.n_diff, c.n_ma, c.d, rng, c.ma_min_order))
    for _ in range(c.n_open_layers):
        ssms = tuple(_random_companion(rng, c.d, D=1.0) for _ in range(c.s))
        ffn = None
        if c.ffn:
            f = 2 * c.s
            ffn = Ffn(
                rng.normal(0.0, 1.0 / np.sqrt(c.s), size=(c.s, f)),
                np.zeros(f),
                rng.normal(0.0, 1.0 / np.sqrt(f), size=(f, c.s)),
                np.zeros(c.s),
            )
        layers.append(MultiSsmLayer(ssms, ffn))
    decoder = MultiSsmLayer(tuple(_random_companion(rng, c.d, with_k=True) for _ in range(c.s)))
    return Network(encoder, tuple(layers), decoder, grouped_readout(c.m, c.s), asdict(c))
