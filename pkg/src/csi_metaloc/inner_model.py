"""The versatile localization regressor: a small CNN evaluated functionally.

The model maps a fingerprint image to 2-D coordinates. Parameters live
outside the model in a :class:`ParamSet` (an ordered name -> array map), and
every evaluation takes the parameters explicitly. That functional form is
what lets the meta-engine differentiate through inner-loop gradient steps.

The reference architecture is four 3x3 convolutions (8, 16, 32, 32 channels,
ReLU, 2x2 max-pool after the first three) followed by one fully connected
layer to 2 outputs. Kernel sizes and channel counts are this package's
choice; any consistent 4-conv + 1-fc stack fits the intended design. There is
deliberately no batch normalization: running statistics interact badly with
per-task adaptation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .csi_data import CSIImage
from .errors import ArgumentError, FormatError, ShapeError

_ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    activation: str = "relu"
    pool: int = 1  # max-pool window; 1 disables pooling

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}, expected one of {_ACTIVATIONS}")
        if min(self.out_channels, self.kernel_size, self.stride, self.pool) < 1 or self.padding < 0:
            raise ArgumentError(f"invalid conv stage {self}")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; the forward shape chain is checked eagerly."""

    input_shape: tuple[int, int, int]  # (C, H, W)
    conv_stages: tuple[ConvStage, ...]
    output_dim: int = 2

    def __post_init__(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input shape must be (C, H, W) with positive sizes, got {self.input_shape}")
        if not self.conv_stages:
            raise ArgumentError("at least one conv stage is required")
        if self.output_dim != 2:
            raise ArgumentError(f"coordinate output must be 2-D, got output_dim={self.output_dim}")
        object.__setattr__(self, "conv_stages", tuple(self.conv_stages))
        self.feature_shapes()  # raises if the chain collapses

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(C, H, W) after each conv stage, starting from the input."""
        shapes = [tuple(int(v) for v in self.input_shape)]
        c, h, w = shapes[0]
        for i, st in enumerate(self.conv_stages):
            h = (h + 2 * st.padding - st.kernel_size) // st.stride + 1
            w = (w + 2 * st.padding - st.kernel_size) // st.stride + 1
            if st.pool > 1:
                h, w = h // st.pool, w // st.pool
            if h < 1 or w < 1:
                raise ShapeError(f"conv stage {i} reduces the feature map to {h}x{w}")
            c = st.out_channels
            shapes.append((c, h, w))
        return shapes

    @property
    def flat_features(self) -> int:
        c, h, w = self.feature_shapes()[-1]
        return c * h * w

    def parameter_shapes(self) -> "dict[str, tuple[int, ...]]":
        shapes: dict[str, tuple[int, ...]] = {}
        in_c = self.input_shape[0]
        for i, st in enumerate(self.conv_stages):
            shapes[f"conv{i + 1}.weight"] = (st.out_channels, in_c, st.kernel_size, st.kernel_size)
            shapes[f"conv{i + 1}.bias"] = (st.out_channels,)
            in_c = st.out_channels
        shapes["fc.weight"] = (self.output_dim, self.flat_features)
        shapes["fc.bias"] = (self.output_dim,)
        return shapes


def reference_model_spec(input_shape: tuple[int, int, int] = (3, 60, 60)) -> ModelSpec:
    """The reference 4-conv + 1-fc regressor for the given image shape."""
    return ModelSpec(
        input_shape=input_shape,
        conv_stages=(
            ConvStage(8, pool=2),
            ConvStage(16, pool=2),
            ConvStage(32, pool=2),
            ConvStage(32, pool=1),
        ),
    )


class ParamSet:
    """Ordered layer-name -> array map; immutable and elementwise combinable."""

    __slots__ = ("_arrays",)

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        store: dict[str, np.ndarray] = {}
        for name, arr in arrays.items():
            arr = np.array(arr, copy=True)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float64)
            arr.flags.writeable = False
            store[name] = arr
        if not store:
            raise ArgumentError("a parameter set cannot be empty")
        self._arrays = store

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def names(self) -> list[str]:
        return list(self._arrays)

    @property
    def total_parameters(self) -> int:
        return sum(a.size for a in self._arrays.values())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._arrays.values())).dtype

    def _zip(self, other: "ParamSet"):
        if self.names != other.names:
            raise ShapeError("parameter sets come from different architectures")
        for name in self._arrays:
            a, b = self._arrays[name], other._arrays[name]
            if a.shape != b.shape:
                raise ShapeError(f"layer {name}: shape {a.shape} vs {b.shape}")
            yield name, a, b

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return ParamSet({n: a + b for n, a, b in self._zip(other)})

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return ParamSet({n: a - b for n, a, b in self._zip(other)})

    def scale(self, c: float) -> "ParamSet":
        return ParamSet({n: c * a for n, a in self._arrays.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({n: a.astype(dtype) for n, a in self._arrays.items()})

    def allclose(self, other: "ParamSet", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return all(np.allclose(a, b, atol=atol, rtol=rtol) for _, a, b in self._zip(other))

    def equals(self, other: "ParamSet") -> bool:
        try:
            return all(np.array_equal(a, b) for _, a, b in self._zip(other))
        except ShapeError:
            return False

    def max_abs_diff(self, other: "ParamSet") -> float:
        return max(float(np.max(np.abs(a - b))) if a.size else 0.0 for _, a, b in self._zip(other))

    def checksum(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for name, arr in self._arrays.items():
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.digest()

    def __repr__(self) -> str:
        return f"ParamSet({len(self._arrays)} layers, {self.total_parameters} parameters, {self.dtype})"


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> ParamSet:
    """Seeded He-uniform initialization: Var[w] = 2 / fan_in, biases zero."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in spec.parameter_shapes().items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ParamSet(arrays)


# ---------------------------------------------------------------------------
# torch functional core (shared with the meta-engine)


def params_to_tensors(params: ParamSet, requires_grad: bool = False) -> "dict[str, torch.Tensor]":
    out = {}
    for name, arr in params.items():
        t = torch.from_numpy(np.array(arr))
        t.requires_grad_(requires_grad)
        out[name] = t
    return out


def tensors_to_params(tensors: Mapping[str, torch.Tensor]) -> ParamSet:
    return ParamSet({n: t.detach().numpy() for n, t in tensors.items()})


def functional_forward(
    spec: ModelSpec, tensors: Mapping[str, torch.Tensor], x: torch.Tensor
) -> torch.Tensor:
    if x.shape[1:] != torch.Size(spec.input_shape):
        raise ShapeError(f"input batch shape {tuple(x.shape)} does not match spec input {spec.input_shape}")
    h = x
    for i, st in enumerate(spec.conv_stages):
        h = F.conv2d(h, tensors[f"conv{i + 1}.weight"], tensors[f"conv{i + 1}.bias"],
                     stride=st.stride, padding=st.padding)
        if st.activation == "relu":
            h = F.relu(h)
        if st.pool > 1:
            h = F.max_pool2d(h, st.pool)
    h = h.flatten(1)
    return F.linear(h, tensors["fc.weight"], tensors["fc.bias"])


def penultimate_features(
    spec: ModelSpec, tensors: Mapping[str, torch.Tensor], x: torch.Tensor
) -> torch.Tensor:
    """Flattened activations feeding the fully connected layer."""
    h = x
    for i, st in enumerate(spec.conv_stages):
        h = F.conv2d(h, tensors[f"conv{i + 1}.weight"], tensors[f"conv{i + 1}.bias"],
                     stride=st.stride, padding=st.padding)
        if st.activation == "relu":
            h = F.relu(h)
        if st.pool > 1:
            h = F.max_pool2d(h, st.pool)
    return h.flatten(1)


def loss_tensor(predictions: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over samples of the squared Euclidean coordinate error."""
    return ((predictions - labels) ** 2).sum(dim=1).mean()


def _as_batch(images, dtype) -> np.ndarray:
    if isinstance(images, np.ndarray):
        batch = images
    else:
        batch = np.stack([img.pixels if isinstance(img, CSIImage) else np.asarray(img) for img in images])
    if batch.ndim != 4:
        raise ShapeError(f"expected a (N, C, H, W) batch, got shape {batch.shape}")
    return batch.astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# public numpy-facing operations


def forward(spec: ModelSpec, params: ParamSet, images: Sequence[CSIImage] | np.ndarray) -> np.ndarray:
    """Predict coordinates for a batch; returns (N, 2), never mutates params."""
    batch = _as_batch(images, params.dtype)
    with torch.no_grad():
        out = functional_forward(spec, params_to_tensors(params), torch.from_numpy(batch))
    result = out.numpy()
    if not np.all(np.isfinite(result)):
        raise ArgumentError("model produced non-finite predictions")
    return result


def loss(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared Euclidean error between predicted and true coordinates."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape:
        raise ShapeError(f"predictions {predictions.shape} vs labels {labels.shape}")
    if predictions.size == 0:
        raise ArgumentError("loss of an empty batch is undefined")
    return float(((predictions - labels) ** 2).sum(axis=1).mean())


def grad(
    spec: ModelSpec,
    params: ParamSet,
    images: Sequence[CSIImage] | np.ndarray,
    labels: np.ndarray,
) -> ParamSet:
    """Gradient of :func:`loss` with respect to every parameter array."""
    batch = _as_batch(images, params.dtype)
    labels = np.asarray(labels, dtype=params.dtype)
    if len(labels) != len(batch):
        raise ShapeError(f"{len(batch)} images but {len(labels)} labels")
    tensors = params_to_tensors(params, requires_grad=True)
    out = functional_forward(spec, tensors, torch.from_numpy(batch))
    l = loss_tensor(out, torch.from_numpy(labels))
    grads = torch.autograd.grad(l, list(tensors.values()))
    return ParamSet({n: g.numpy() for n, g in zip(tensors, grads)})


# ---------------------------------------------------------------------------
# checkpoint codec: JSON layer manifest + little-endian raw payload

_CKPT_MAGIC = b"CSIP"
_CKPT_HEADER = struct.Struct("<4sII")  # magic, version, manifest byte length
_CKPT_VERSION = 1
_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def save_params(params: ParamSet, path: str | Path) -> None:
    manifest = [
        {"name": n, "shape": list(a.shape), "dtype": str(a.dtype)} for n, a in params.items()
    ]
    body = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, len(body)))
        f.write(body)
        for _, arr in params.items():
            f.write(np.ascontiguousarray(arr).astype(_DTYPE_TAGS[str(arr.dtype)]).tobytes())


def load_params(path: str | Path) -> ParamSet:
    blob = Path(path).read_bytes()
    if len(blob) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header", offset=len(blob))
    magic, version, manifest_len = _CKPT_HEADER.unpack_from(blob, 0)
    if magic != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}", offset=0)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    offset = _CKPT_HEADER.size
    manifest = json.loads(blob[offset : offset + manifest_len].decode("utf-8"))
    offset += manifest_len
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest:
        tag = _DTYPE_TAGS.get(entry["dtype"])
        if tag is None:
            raise FormatError(f"{path}: unknown dtype {entry['dtype']!r}", offset=offset)
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * int(tag[-1])
        if len(blob) - offset < nbytes:
            raise FormatError(f"{path}: truncated payload for layer {entry['name']}", offset=len(blob))
        arrays[entry["name"]] = np.frombuffer(blob, dtype=tag, count=count, offset=offset).reshape(
            entry["shape"]
        )
        offset += nbytes
    return ParamSet(arrays)
