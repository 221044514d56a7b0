"""The context-aware coordinate network and its parameter bookkeeping.

Layout: two pointwise branches (one for RGB, one for normalized pixel
coordinates), concatenated into a 64-wide trunk that runs through a context
block (1x1 conv, KxK depthwise conv, 1x1 conv) and a zero-initialized 1x1
head. With the global residual enabled the freshly initialized network is
exactly the identity map on its RGB input.

Every ablation knob lives on ModelConfig so that parameter accounting,
initialization, serialization and the forward pass all derive from one
layer table (see _layer_table).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError, Tape

MODEL_MAGIC = b"INRT"
MODEL_FORMAT_VERSION = 1

# Frequency bands used when fourier_features is on: the 2 raw coordinates
# expand to 2 * 2 * FOURIER_BANDS sin/cos channels.
FOURIER_BANDS = 4


class ConfigError(ValueError):
    """Model configuration violates an invariant."""


class ModelFileError(ValueError):
    """Serialized model file is malformed or has an unsupported version."""


@dataclass(frozen=True)
class ModelConfig:
    branch_width: int = 32
    trunk_width: int = 64
    window_n: int = 13
    omega_first: float = 30.0
    omega_hidden: float = 30.0
    use_context: bool = True
    use_residual: bool = True
    dw_kernel: int = 3
    fourier_features: bool = False
    extra_depth: int = 0
    # Ablation-ladder knobs: the plain-MLP baseline turns all three branches
    # of (sine, split, context) off; sine_after_dw mirrors the choice of
    # activating the depthwise layer like every other hidden layer.
    use_sine: bool = True
    use_split: bool = True
    sine_after_dw: bool = True

    def validate(self) -> "ModelConfig":
        if self.branch_width < 1 or self.trunk_width < 1:
            raise ConfigError("widths must be >= 1")
        if self.trunk_width != 2 * self.branch_width:
            raise ConfigError(
                f"trunk_width must equal 2*branch_width, got {self.trunk_width} vs 2*{self.branch_width}"
            )
        if self.dw_kernel < 1 or self.dw_kernel % 2 != 1:
            raise ConfigError(f"dw_kernel must be odd and >= 1, got {self.dw_kernel}")
        if self.window_n < self.dw_kernel or self.window_n % 2 != 1:
            raise ConfigError(
                f"window_n must be odd and >= dw_kernel, got {self.window_n}"
            )
        if self.extra_depth < 0:
            raise ConfigError(f"extra_depth must be >= 0, got {self.extra_depth}")
        if self.omega_first <= 0 or self.omega_hidden <= 0:
            raise ConfigError("omega values must be positive")
        return self

    @property
    def coord_channels(self) -> int:
        return 2 * 2 * FOURIER_BANDS if self.fourier_features else 2


def encode_coords(coords: np.ndarray) -> np.ndarray:
    """Sinusoidal expansion of a (2, ...) coordinate field.

    Bands are sin/cos at frequencies pi * 2^j, j < FOURIER_BANDS. Pure input
    preprocessing; never differentiated.
    """
    chunks = []
    for j in range(FOURIER_BANDS):
        phase = (np.pi * (2.0**j)) * coords
        chunks.append(np.sin(phase))
        chunks.append(np.cos(phase))
    return np.concatenate(chunks, axis=0).astype(coords.dtype)


def _layer_table(config: ModelConfig):
    """Ordered (name, shape, init_kind) triples for every parameter array.

    init_kind: 'first' U(+-1/fan_in), 'hidden' U(+-sqrt(6/fan_in)/omega),
    'zero' for the head, 'bias' always zero. This single table drives
    allocation, counting, initialization and the file format.
    """
    bw, tw = config.branch_width, config.trunk_width
    table = []
    if config.use_split:
        table += [
            ("rgb_branch.0.weight", (bw, 3), "first"),
            ("rgb_branch.0.bias", (bw,), "bias"),
            ("rgb_branch.1.weight", (bw, bw), "hidden"),
            ("rgb_branch.1.bias", (bw,), "bias"),
            ("coord_branch.0.weight", (bw, config.coord_channels), "first"),
            ("coord_branch.0.bias", (bw,), "bias"),
            ("coord_branch.1.weight", (bw, bw), "hidden"),
            ("coord_branch.1.bias", (bw,), "bias"),
        ]
    else:
        table += [
            ("joint_branch.0.weight", (tw, 3 + config.coord_channels), "first"),
            ("joint_branch.0.bias", (tw,), "bias"),
            ("joint_branch.1.weight", (tw, tw), "hidden"),
            ("joint_branch.1.bias", (tw,), "bias"),
        ]
    table += [
        ("context.pre.weight", (tw, tw), "hidden"),
        ("context.pre.bias", (tw,), "bias"),
    ]
    if config.use_context:
        k = config.dw_kernel
        table += [
            ("context.dw.kernel", (tw, k, k), "hidden"),
            ("context.dw.bias", (tw,), "bias"),
        ]
    table += [
        ("context.post.weight", (tw, tw), "hidden"),
        ("context.post.bias", (tw,), "bias"),
    ]
    for i in range(config.extra_depth):
        table += [
            (f"extra.{i}.weight", (tw, tw), "hidden"),
            (f"extra.{i}.bias", (tw,), "bias"),
        ]
    table += [
        ("head.weight", (3, tw), "zero"),
        ("head.bias", (3,), "bias"),
    ]
    return table


@dataclass
class ModelParams:
    """Named parameter arrays plus the config that shaped them."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def total_scalars(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())

    def to_nodes(self) -> dict[str, Node]:
        """Wrap the arrays (by reference) as named trainable graph nodes."""
        return {name: ad.parameter(name, arr) for name, arr in self.arrays.items()}


def param_count(config: ModelConfig) -> int:
    """Number of scalars the model allocates for this configuration."""
    config.validate()
    return sum(int(np.prod(shape)) for _, shape, _ in _layer_table(config))


def bias_count(config: ModelConfig) -> int:
    config.validate()
    return sum(
        int(np.prod(shape))
        for name, shape, _ in _layer_table(config)
        if name.endswith(".bias")
    )


def mac_count(config: ModelConfig, height: int, width: int) -> int:
    """Multiply-accumulates for one whole-image forward pass.

    Every weight scalar contributes exactly one MAC per pixel (replicate
    padding keeps the depthwise window full-size at borders), so the count
    is simply (param_count - bias_count) * H * W.
    """
    return (param_count(config) - bias_count(config)) * height * width


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic SIREN-style initialization.

    First-layer weights ~ U(-1/fan_in, 1/fan_in); hidden weights
    ~ U(-sqrt(6/fan_in)/omega_hidden, +sqrt(6/fan_in)/omega_hidden); all
    biases zero; head exactly zero. When use_sine is off, the omega divisor
    is dropped (plain Kaiming-uniform for the ReLU variants).
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    omega = config.omega_hidden if config.use_sine else 1.0
    arrays = {}
    for name, shape, kind in _layer_table(config):
        if kind == "bias" or kind == "zero":
            arrays[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(shape[1:]))
        if kind == "first":
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / omega
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ModelParams(config, arrays)


def forward_model(
    params: ModelParams,
    rgb: Node | np.ndarray,
    coords: Node | np.ndarray,
    tape: Tape | None = None,
) -> Node:
    """Evaluate the network on channel-first inputs.

    rgb has 3 leading channels, coords 2; the trailing axes of both must
    match (a plain image is (C, H, W), a training batch (C, B, n, n)).
    Output is unclamped; clamping belongs to image save time.
    """
    cfg = params.config
    if not isinstance(rgb, Node):
        rgb = ad.feature_map(rgb)
    coords_data = coords.data if isinstance(coords, Node) else np.asarray(coords)
    if rgb.data.shape[0] != 3:
        raise ShapeError(f"rgb input must have 3 channels, got {rgb.data.shape[0]}")
    if coords_data.shape[0] != 2:
        raise ShapeError(f"coords input must have 2 channels, got {coords_data.shape[0]}")
    if rgb.data.shape[1:] != coords_data.shape[1:]:
        raise ShapeError(
            f"rgb/coords spatial mismatch: {rgb.data.shape[1:]} vs {coords_data.shape[1:]}"
        )
    if cfg.fourier_features:
        coords_data = encode_coords(coords_data)
    coords_in = ad.feature_map(coords_data)

    nodes = params.to_nodes() if tape is not None else {
        name: Node(arr) for name, arr in params.arrays.items()
    }

    def act(x: Node, omega: float) -> Node:
        if cfg.use_sine:
            return ad.sine_act(x, omega, tape)
        return ad.relu_act(x, tape)

    def conv(x: Node, prefix: str) -> Node:
        return ad.conv1x1(x, nodes[prefix + ".weight"], nodes[prefix + ".bias"], tape)

    if cfg.use_split:
        r = act(conv(rgb, "rgb_branch.0"), cfg.omega_first)
        r = act(conv(r, "rgb_branch.1"), cfg.omega_hidden)
        c = act(conv(coords_in, "coord_branch.0"), cfg.omega_first)
        c = act(conv(c, "coord_branch.1"), cfg.omega_hidden)
        t = ad.concat_channels(r, c, tape)
    else:
        j = ad.concat_channels(rgb, coords_in, tape)
        t = act(conv(j, "joint_branch.0"), cfg.omega_first)
        t = act(conv(t, "joint_branch.1"), cfg.omega_hidden)

    t = act(conv(t, "context.pre"), cfg.omega_hidden)
    if cfg.use_context:
        t = ad.dwconv(t, nodes["context.dw.kernel"], nodes["context.dw.bias"], tape)
        if cfg.sine_after_dw:
            t = act(t, cfg.omega_hidden)
    t = act(conv(t, "context.post"), cfg.omega_hidden)
    for i in range(cfg.extra_depth):
        t = act(conv(t, f"extra.{i}"), cfg.omega_hidden)
    out = conv(t, "head")
    if cfg.use_residual:
        out = ad.add(rgb, out, tape)
    return out


# ---------------------------------------------------------------------------
# Model file format: magic, u16 version, config fields, float32 arrays in
# layer-table order. All integers little-endian.
# ---------------------------------------------------------------------------

_CONFIG_CODES = {int: "<u4", float: "<f4", bool: "<u1"}


def _config_fields():
    return [(f.name, f.type) for f in fields(ModelConfig)]


def save_model(params: ModelParams, path) -> None:
    cfg = params.config
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<H", MODEL_FORMAT_VERSION)
    for name, _ in _config_fields():
        value = getattr(cfg, name)
        if isinstance(value, bool):
            blob += struct.pack("<B", int(value))
        elif isinstance(value, int):
            blob += struct.pack("<I", value)
        else:
            blob += struct.pack("<f", value)
    for name, shape, _ in _layer_table(cfg):
        arr = np.ascontiguousarray(params.arrays[name], dtype="<f4")
        if arr.shape != shape:
            raise ModelFileError(f"array {name} has shape {arr.shape}, expected {shape}")
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise ModelFileError("not a model file (bad magic bytes)")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    pos = 6
    values = {}
    for name, _ in _config_fields():
        default = getattr(ModelConfig, name)
        if isinstance(default, bool):
            values[name] = bool(blob[pos])
            pos += 1
        elif isinstance(default, int):
            (values[name],) = struct.unpack("<I", blob[pos : pos + 4])
            pos += 4
        else:
            (values[name],) = struct.unpack("<f", blob[pos : pos + 4])
            pos += 4
    config = ModelConfig(**values).validate()
    arrays = {}
    for name, shape, _ in _layer_table(config):
        count = int(np.prod(shape))
        end = pos + 4 * count
        if end > len(blob):
            raise ModelFileError(f"model file truncated in array {name}")
        arrays[name] = (
            np.frombuffer(blob[pos:end], dtype="<f4").astype(np.float32).reshape(shape)
        )
        pos += 4 * count
    if pos != len(blob):
        raise ModelFileError(f"model file has {len(blob) - pos} trailing bytes")
    return ModelParams(config, arrays)


def default_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides).validate()
