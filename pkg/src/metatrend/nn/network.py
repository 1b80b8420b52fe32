"""Network graphs for the three classifiers and the parameter container.

A network is a static list of nodes over value slots; slot 0 is the input
(batch, channels, time). Parameters live in an ordered dict keyed by stable
layer names, so two models built from the same architecture and scale are
structurally congruent regardless of seed.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from metatrend.errors import ModelError
from metatrend.indicators import FEATURE_NAMES, feature_checksum
from metatrend.nn.layers import (
    Add,
    BatchNorm,
    Conv1D,
    Dense,
    GlobalAvgPool,
    LastStep,
    Op,
    ReLU,
    cross_entropy,
)
from metatrend.tensor import WINDOW_DAYS

ARCHS = ("fcn", "resnet", "tcn")
NUM_CLASSES = 4
IN_CHANNELS = len(FEATURE_NAMES)

PARAMS_MAGIC = b"MTPARAMS"


@dataclass(frozen=True)
class ScaleConfig:
    """Width divisor applied to every ledger channel count (1 = paper scale,
    8 = desk-scale tests); ``tcn_levels`` sets the dilated level count."""

    divisor: int = 1
    tcn_levels: int = 4

    def __post_init__(self):
        if self.divisor < 1:
            raise ModelError(f"scale divisor must be >= 1, got {self.divisor}")
        if self.tcn_levels < 1:
            raise ModelError(f"tcn_levels must be >= 1, got {self.tcn_levels}")

    def width(self, base: int) -> int:
        w = base // self.divisor
        if w < 1:
            raise ModelError(
                f"scale divisor {self.divisor} collapses width {base} to zero channels"
            )
        return w


@dataclass
class Batch:
    """Model inputs (B, 22, 15) paired with ordinal targets (B,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 3 or self.inputs.shape[1:] != (WINDOW_DAYS, IN_CHANNELS):
            raise ModelError(f"batch inputs shape {self.inputs.shape}")
        if self.inputs.shape[0] < 1:
            raise ModelError("empty batch")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ModelError("batch targets shape mismatch")
        if self.targets.min() < 0 or self.targets.max() >= NUM_CLASSES:
            raise ModelError("batch target ordinal out of range")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ModelParams:
    """Parameter set of one network; serves as the meta-learner or any
    task-learner. ``values`` includes normalization running statistics."""

    arch: str
    scale: ScaleConfig
    seed: int
    values: dict[str, np.ndarray]
    dtype: str = "float32"

    def congruent_with(self, other: "ModelParams") -> bool:
        if self.arch != other.arch or self.scale != other.scale:
            return False
        if list(self.values) != list(other.values):
            return False
        return all(
            self.values[k].shape == other.values[k].shape for k in self.values
        )


@dataclass
class Node:
    op: Op
    inputs: tuple[int, ...]


class Network:
    """Static op graph with a trunk slot (pre-head features) and output slot."""

    def __init__(self, arch: str, scale: ScaleConfig):
        self.arch = arch
        self.scale = scale
        self.nodes: list[Node] = []
        self._built = False
        self.trunk_slot = 0
        self.out_slot = 0

    def _add(self, op: Op, *inputs: int) -> int:
        self.nodes.append(Node(op, inputs))
        return len(self.nodes)  # value slot of this node's output

    def param_specs(self):
        for node in self.nodes:
            yield from node.op.param_specs()

    @property
    def trainable_keys(self) -> list[str]:
        return [k for k, _, _ in self.param_specs() if "running" not in k]

    @property
    def state_keys(self) -> list[str]:
        return [k for k, _, _ in self.param_specs() if "running" in k]

    def init_params(self, seed: int, dtype: str = "float32") -> ModelParams:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        values: dict[str, np.ndarray] = {}
        np_dtype = np.dtype(dtype)
        for node in self.nodes:
            node.op.init(values, rng, np_dtype)
        return ModelParams(self.arch, self.scale, seed, values, dtype)

    def _check(self, params: ModelParams) -> None:
        if params.arch != self.arch or params.scale != self.scale:
            raise ModelError(
                f"params for {params.arch}/{params.scale} used with "
                f"{self.arch}/{self.scale} network"
            )

    def _run(self, params: ModelParams, x: np.ndarray, train: bool,
             update_stats: bool, keep_ctx: bool):
        slots: list = [x] + [None] * len(self.nodes)
        ctxs = [{} for _ in self.nodes] if keep_ctx else [None] * len(self.nodes)
        for i, node in enumerate(self.nodes):
            ins = [slots[j] for j in node.inputs]
            slots[i + 1] = node.op.forward(
                params.values, ins, ctxs[i], train, update_stats
            )
        return slots, (ctxs if keep_ctx else None)

    def forward(self, params: ModelParams, inputs: np.ndarray,
                mode: str = "eval", update_stats: bool = True) -> np.ndarray:
        """Logits (B, 4) for a (B, 22, 15) input block."""
        self._check(params)
        x = self._to_channels(params, inputs)
        train = mode == "train"
        slots, _ = self._run(params, x, train, train and update_stats, keep_ctx=False)
        logits = slots[self.out_slot]
        if not np.isfinite(logits).all():
            raise ModelError("non-finite logits")
        return logits

    def trunk_features(self, params: ModelParams, inputs: np.ndarray,
                       mode: str = "eval") -> np.ndarray:
        """Pre-head (B, C, T) features; used by the causality checks."""
        self._check(params)
        x = self._to_channels(params, inputs)
        slots, _ = self._run(params, x, mode == "train", False, keep_ctx=False)
        return slots[self.trunk_slot]

    def loss_only(self, params: ModelParams, batch: Batch) -> float:
        """Train-mode loss without gradients or stat updates (used by the
        finite-difference oracle, which needs many cheap evaluations)."""
        self._check(params)
        x = self._to_channels(params, batch.inputs)
        slots, _ = self._run(params, x, True, False, keep_ctx=False)
        loss, _ = cross_entropy(slots[self.out_slot], batch.targets)
        return loss

    def loss_and_grads(self, params: ModelParams, batch: Batch,
                       update_stats: bool = True):
        """Mean cross-entropy and gradients for every trainable key."""
        self._check(params)
        x = self._to_channels(params, batch.inputs)
        slots, ctxs = self._run(params, x, True, update_stats, keep_ctx=True)
        logits = slots[self.out_slot]
        loss, dlogits = cross_entropy(logits, batch.targets)
        grads: dict[str, np.ndarray] = {}
        adjoints: list = [None] * (len(self.nodes) + 1)
        adjoints[self.out_slot] = dlogits
        for i in range(len(self.nodes) - 1, -1, -1):
            dout = adjoints[i + 1]
            if dout is None:
                continue
            dins = self.nodes[i].op.backward(params.values, grads, ctxs[i], dout)
            for j, din in zip(self.nodes[i].inputs, dins):
                if adjoints[j] is None:
                    adjoints[j] = din
                else:
                    adjoints[j] = adjoints[j] + din
        return loss, grads

    def _to_channels(self, params: ModelParams, inputs: np.ndarray) -> np.ndarray:
        if inputs.ndim != 3 or inputs.shape[1:] != (WINDOW_DAYS, IN_CHANNELS):
            raise ModelError(f"input shape {inputs.shape} != (B, 22, 15)")
        # Features become channels; days are the convolved axis.
        return np.ascontiguousarray(
            inputs.transpose(0, 2, 1), dtype=np.dtype(params.dtype)
        )


def _conv_bn_relu(net: Network, tag: str, slot: int, c_in: int, c_out: int,
                  kernel: int, dilation: int = 1, padding: str = "same") -> int:
    slot = net._add(Conv1D(f"{tag}", c_in, c_out, kernel, dilation, padding), slot)
    slot = net._add(BatchNorm(f"{tag}_bn", c_out), slot)
    return net._add(ReLU(), slot)


def _build_fcn(scale: ScaleConfig) -> Network:
    net = Network("fcn", scale)
    w1, w2, w3 = scale.width(128), scale.width(256), scale.width(128)
    slot = _conv_bn_relu(net, "conv1", 0, IN_CHANNELS, w1, 8)
    slot = _conv_bn_relu(net, "conv2", slot, w1, w2, 5)
    slot = _conv_bn_relu(net, "conv3", slot, w2, w3, 3)
    net.trunk_slot = slot
    slot = net._add(GlobalAvgPool(), slot)
    net.out_slot = net._add(Dense("head", w3, NUM_CLASSES), slot)
    return net


def _residual_block(net: Network, tag: str, slot: int, c_in: int, c_out: int) -> int:
    body = _conv_bn_relu(net, f"{tag}/conv1", slot, c_in, c_out, 8)
    body = _conv_bn_relu(net, f"{tag}/conv2", body, c_out, c_out, 5)
    body = net._add(Conv1D(f"{tag}/conv3", c_out, c_out, 3), body)
    body = net._add(BatchNorm(f"{tag}/conv3_bn", c_out), body)
    if c_in != c_out:
        short = net._add(Conv1D(f"{tag}/short", c_in, c_out, 1), slot)
        short = net._add(BatchNorm(f"{tag}/short_bn", c_out), short)
    else:
        short = slot
    merged = net._add(Add(), body, short)
    return net._add(ReLU(), merged)


def _build_resnet(scale: ScaleConfig) -> Network:
    net = Network("resnet", scale)
    w1, w2, w3 = scale.width(64), scale.width(128), scale.width(128)
    slot = _residual_block(net, "block1", 0, IN_CHANNELS, w1)
    slot = _residual_block(net, "block2", slot, w1, w2)
    slot = _residual_block(net, "block3", slot, w2, w3)
    net.trunk_slot = slot
    slot = net._add(GlobalAvgPool(), slot)
    net.out_slot = net._add(Dense("head", w3, NUM_CLASSES), slot)
    return net


def _tcn_level(net: Network, tag: str, slot: int, c_in: int, c_out: int,
               dilation: int) -> int:
    body = _conv_bn_relu(net, f"{tag}/conv1", slot, c_in, c_out, 3, dilation, "causal")
    body = net._add(Conv1D(f"{tag}/conv2", c_out, c_out, 3, dilation, "causal"), body)
    body = net._add(BatchNorm(f"{tag}/conv2_bn", c_out), body)
    if c_in != c_out:
        short = net._add(Conv1D(f"{tag}/short", c_in, c_out, 1), slot)
        short = net._add(BatchNorm(f"{tag}/short_bn", c_out), short)
    else:
        short = slot
    merged = net._add(Add(), body, short)
    return net._add(ReLU(), merged)


def _build_tcn(scale: ScaleConfig) -> Network:
    net = Network("tcn", scale)
    ch = scale.width(64)
    slot = 0
    c_in = IN_CHANNELS
    for level in range(scale.tcn_levels):
        slot = _tcn_level(net, f"level{level}", slot, c_in, ch, 2 ** level)
        c_in = ch
    net.trunk_slot = slot
    slot = net._add(LastStep(), slot)
    net.out_slot = net._add(Dense("head", ch, NUM_CLASSES), slot)
    return net


def tcn_receptive_field(scale: ScaleConfig, kernel: int = 3) -> int:
    """Span of input steps influencing the last output position: two causal
    convs per level with dilations 1, 2, 4, ... give 1 + 2(k-1)(2^L - 1)."""
    return 1 + 2 * (kernel - 1) * (2 ** scale.tcn_levels - 1)


def build_network(arch: str, scale: ScaleConfig | None = None) -> Network:
    scale = scale or ScaleConfig()
    if arch == "fcn":
        net = _build_fcn(scale)
    elif arch == "resnet":
        net = _build_resnet(scale)
    elif arch == "tcn":
        net = _build_tcn(scale)
        if tcn_receptive_field(scale) < WINDOW_DAYS:
            raise ModelError(
                f"TCN receptive field {tcn_receptive_field(scale)} < {WINDOW_DAYS}; "
                f"increase tcn_levels"
            )
    else:
        raise ModelError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    return net


def build_model(arch: str, scale: ScaleConfig | None = None, seed: int = 0,
                dtype: str = "float32") -> ModelParams:
    """Deterministically initialized parameters for one architecture."""
    scale = scale or ScaleConfig()
    return build_network(arch, scale).init_params(seed, dtype)


def param_count(params: ModelParams, trainable_only: bool = True) -> int:
    net = build_network(params.arch, params.scale)
    keys = net.trainable_keys if trainable_only else list(params.values)
    return int(sum(params.values[k].size for k in keys))


def clone_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        arch=params.arch,
        scale=params.scale,
        seed=params.seed,
        values={k: v.copy() for k, v in params.values.items()},
        dtype=params.dtype,
    )


def assign(dst: ModelParams, src: ModelParams) -> None:
    """Copy src values into dst in place; structures must be congruent."""
    if not dst.congruent_with(src):
        raise ModelError("assign between incongruent parameter structures")
    for k in dst.values:
        np.copyto(dst.values[k], src.values[k])


def params_fingerprint(params: ModelParams) -> str:
    """Content hash of every tensor; used to assert a model was not mutated."""
    digest = hashlib.sha256()
    for key in params.values:
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(params.values[key]).tobytes())
    return digest.hexdigest()


def save_params(params: ModelParams, path: str | Path,
                config_hash: str | None = None) -> None:
    """Binary parameter file: magic, length-prefixed JSON header, then one
    little-endian float32 blob per key in header order."""
    if params.dtype != "float32":
        raise ModelError(f"only float32 models are persisted, got {params.dtype}")
    header = {
        "format": "metatrend-params-v1",
        "arch": params.arch,
        "scale": {"divisor": params.scale.divisor, "tcn_levels": params.scale.tcn_levels},
        "seed": params.seed,
        "feature_checksum": feature_checksum(),
        "tensors": [
            {"name": k, "shape": list(v.shape)} for k, v in params.values.items()
        ],
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    blob += PARAMS_MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for key, value in params.values.items():
        blob += np.ascontiguousarray(value, dtype="<f4").tobytes()
    from metatrend.ioutil import atomic_write_bytes

    atomic_write_bytes(Path(path), bytes(blob))


def load_params(path: str | Path, arch: str | None = None,
                expect_hash: str | None = None) -> ModelParams:
    path = Path(path)
    if not path.exists():
        from metatrend.errors import ArtifactMissingError
        raise ArtifactMissingError(path, "meta-train")
    raw = path.read_bytes()
    if raw[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ModelError(f"{path}: not a parameter file")
    (header_len,) = struct.unpack_from("<I", raw, len(PARAMS_MAGIC))
    header_start = len(PARAMS_MAGIC) + 4
    try:
        header = json.loads(raw[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: corrupt header: {exc}") from exc
    if arch is not None and header["arch"] != arch:
        raise ModelError(
            f"{path}: holds {header['arch']} parameters, expected {arch}"
        )
    if header.get("feature_checksum") != feature_checksum():
        raise ModelError(f"{path}: feature checksum mismatch")
    if expect_hash is not None and header.get("config_hash") not in (None, expect_hash):
        from metatrend.errors import ArtifactMismatchError
        raise ArtifactMismatchError(
            f"{path}: config hash {header.get('config_hash')} != {expect_hash}"
        )
    scale = ScaleConfig(**header["scale"])
    net = build_network(header["arch"], scale)
    expected = {k: tuple(s) for k, s, _ in net.param_specs()}
    values: dict[str, np.ndarray] = {}
    offset = header_start + header_len
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        if spec["name"] not in expected or expected[spec["name"]] != shape:
            raise ModelError(f"{path}: unexpected tensor {spec['name']} {shape}")
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise ModelError(f"{path}: truncated blob for {spec['name']}")
        values[spec["name"]] = (
            np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        )
        offset = end
    if offset != len(raw):
        raise ModelError(f"{path}: {len(raw) - offset} trailing bytes")
    if set(values) != set(expected):
        raise ModelError(f"{path}: missing tensors")
    return ModelParams(
        arch=header["arch"], scale=scale, seed=header["seed"],
        values=values, dtype="float32",
    )
