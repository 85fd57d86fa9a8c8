"""CSI fingerprint data model: channel responses, fingerprint images, datasets.

A fingerprint image stacks the in-phase (I) and quadrature (Q) components of
the frequency responses of ``n_packets`` consecutive packets. For a receiver
with C antennas and N subcarriers the image has shape ``(C, 2N, n_packets)``:
rows ``0..N-1`` of every channel hold I, rows ``N..2N-1`` hold Q, and column
``t`` corresponds to packet ``t``. Channel index equals receive-antenna index.

Images are stored raw (no normalization); per-channel affine normalization is
applied at model input via :class:`ChannelNormalizer`, with statistics taken
from training tasks only so that stored data stays lossless.

The on-disk dataset layout is::

    <root>/manifest.json
    <root>/tasks/a<area>_p<posture>/rp<id>.csif

where every ``.csif`` file is little-endian binary: magic ``CSIF``, u32
version, u32 K (samples), u32 C, u32 H, u32 W, then K*C*H*W float32 pixels in
(sample, channel, row, col) order. The codec round-trip is bit-exact on pixel
payloads and preserves coordinates to full precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, FormatError, ShapeError

_MAGIC = b"CSIF"
_CODEC_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, K, C, H, W


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class ChannelResponse:
    """Complex frequency response of one packet: (rx antennas, subcarriers).

    Every entry decomposes as I + jQ; values must be finite.
    """

    __slots__ = ("_values",)

    def __init__(self, values: np.ndarray):
        values = np.asarray(values)
        if values.ndim != 2:
            raise ShapeError(
                f"channel response must be 2-D (antennas, subcarriers), got shape {values.shape}"
            )
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"channel response needs at least one antenna and one subcarrier, got {values.shape}")
        values = values.astype(np.complex128, copy=True)
        if not np.all(np.isfinite(values.view(np.float64))):
            raise ArgumentError("channel response contains non-finite entries")
        self._values = _readonly(values)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def num_antennas(self) -> int:
        return self._values.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self._values.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChannelResponse):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __repr__(self) -> str:
        return f"ChannelResponse(antennas={self.num_antennas}, subcarriers={self.num_subcarriers})"


class CSIImage:
    """Real-valued fingerprint image of shape (channels, 2*subcarriers, packets)."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels)
        if pixels.ndim != 3:
            raise ShapeError(f"fingerprint image must be 3-D (C, H, W), got shape {pixels.shape}")
        if pixels.shape[1] % 2 != 0:
            raise ShapeError(f"image height must be even (I rows stacked on Q rows), got {pixels.shape[1]}")
        pixels = pixels.astype(np.float32, copy=True)
        if not np.all(np.isfinite(pixels)):
            raise ArgumentError("fingerprint image contains non-finite pixels")
        self._pixels = _readonly(pixels)

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._pixels.shape  # type: ignore[return-value]

    @property
    def num_channels(self) -> int:
        return self._pixels.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self._pixels.shape[1] // 2

    @property
    def num_packets(self) -> int:
        return self._pixels.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CSIImage):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    def __repr__(self) -> str:
        return f"CSIImage(shape={self.shape})"


@dataclass(frozen=True)
class RefPoint:
    """A surveyed reference point: integer id plus 2-D coordinates in meters."""

    id: int
    area_id: int
    location: tuple[float, float]

    def __post_init__(self):
        if len(self.location) != 2:
            raise ShapeError(f"reference point location must be 2-D, got {self.location!r}")
        if not all(np.isfinite(c) for c in self.location):
            raise ArgumentError(f"reference point {self.id} has non-finite coordinates")
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))

    @property
    def xy(self) -> np.ndarray:
        return np.array(self.location, dtype=np.float64)


@dataclass(frozen=True)
class SampleRef:
    """Provenance of one stored sample: which task and RP it came from."""

    area_id: int
    posture_id: int
    rp_id: int
    sample_index: int

    @property
    def task_key(self) -> "TaskKey":
        return TaskKey(self.area_id, self.posture_id)


@dataclass(frozen=True)
class FingerprintRecord:
    """One labelled fingerprint: the (image, coordinates) pair plus provenance."""

    rp: RefPoint
    image: CSIImage
    source: SampleRef


@dataclass(frozen=True, order=True)
class TaskKey:
    """Identity of one localization task: (subarea, posture)."""

    area_id: int
    posture_id: int

    def __str__(self) -> str:
        return f"a{self.area_id}_p{self.posture_id}"


# ---------------------------------------------------------------------------
# image construction


def build_csi_image(packets: Sequence[ChannelResponse]) -> CSIImage:
    """Assemble the fingerprint image from an ordered packet sequence.

    Per channel (= antenna) ``a`` and column ``t``, the image holds
    ``[I_a(1)..I_a(N), Q_a(1)..Q_a(N)]`` of packet ``t``. All packets must
    share the same (antennas, subcarriers) shape.
    """
    packets = list(packets)
    if not packets:
        raise ArgumentError("cannot build a fingerprint image from an empty packet sequence")
    shape = packets[0].values.shape
    for t, p in enumerate(packets):
        if p.values.shape != shape:
            raise ShapeError(
                f"packet {t} has shape {p.values.shape}, expected {shape} from packet 0"
            )
    stacked = np.stack([p.values for p in packets])  # (T, C, N)
    pixels = np.concatenate([stacked.real, stacked.imag], axis=2)  # (T, C, 2N)
    return CSIImage(pixels.transpose(1, 2, 0))  # (C, 2N, T)


def image_to_responses(image: CSIImage) -> list[ChannelResponse]:
    """Exact inverse of :func:`build_csi_image`."""
    pixels = image.pixels
    if pixels.shape[1] % 2 != 0:
        raise ShapeError(f"image height {pixels.shape[1]} is odd; cannot split into I/Q halves")
    n = pixels.shape[1] // 2
    i_part = pixels[:, :n, :].astype(np.float64)
    q_part = pixels[:, n:, :].astype(np.float64)
    values = i_part + 1j * q_part  # (C, N, T)
    return [ChannelResponse(values[:, :, t]) for t in range(pixels.shape[2])]


# ---------------------------------------------------------------------------
# dataset container


@dataclass(frozen=True)
class AreaInfo:
    id: int
    name: str


@dataclass(frozen=True)
class PostureInfo:
    id: int
    name: str


@dataclass
class FingerprintDataset:
    """Fingerprint records grouped by task, plus the survey metadata.

    ``samples[key][rp_id]`` is the ordered list of images collected at that
    reference point under task ``key``. Records are exposed through
    :meth:`records`, which attaches labels and provenance.
    """

    n_packets: int
    num_subcarriers: int
    num_rx_antennas: int
    areas: list[AreaInfo]
    postures: list[PostureInfo]
    rps: list[RefPoint]
    samples: dict[TaskKey, dict[int, list[CSIImage]]] = field(default_factory=dict)

    def __post_init__(self):
        self._rp_by_id = {rp.id: rp for rp in self.rps}
        if len(self._rp_by_id) != len(self.rps):
            raise ArgumentError("reference point ids must be unique")

    def rp(self, rp_id: int) -> RefPoint:
        return self._rp_by_id[rp_id]

    def area_rps(self, area_id: int) -> list[RefPoint]:
        return [rp for rp in self.rps if rp.area_id == area_id]

    @property
    def task_keys(self) -> list[TaskKey]:
        return list(self.samples.keys())

    def records(self, key: TaskKey) -> list[FingerprintRecord]:
        """All records of one task, ordered by (rp, sample index)."""
        out = []
        for rp_id, images in self.samples[key].items():
            rp = self.rp(rp_id)
            for s, image in enumerate(images):
                out.append(FingerprintRecord(rp, image, SampleRef(key.area_id, key.posture_id, rp_id, s)))
        return out

    def equals(self, other: "FingerprintDataset") -> bool:
        """Structural and bit-exact numerical equality."""
        if (self.n_packets, self.num_subcarriers, self.num_rx_antennas) != (
            other.n_packets,
            other.num_subcarriers,
            other.num_rx_antennas,
        ):
            return False
        if self.areas != other.areas or self.postures != other.postures or self.rps != other.rps:
            return False
        if list(self.samples.keys()) != list(other.samples.keys()):
            return False
        for key in self.samples:
            a, b = self.samples[key], other.samples[key]
            if list(a.keys()) != list(b.keys()):
                return False
            for rp_id in a:
                if len(a[rp_id]) != len(b[rp_id]):
                    return False
                if any(x != y for x, y in zip(a[rp_id], b[rp_id])):
                    return False
        return True


# ---------------------------------------------------------------------------
# input normalization


@dataclass(frozen=True)
class ChannelNormalizer:
    """Per-channel affine normalization applied at model input.

    Statistics must come from training tasks only; query-time data reuses
    them unchanged.
    """

    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(images: Iterable[CSIImage]) -> "ChannelNormalizer":
        pixel_stacks = [img.pixels for img in images]
        if not pixel_stacks:
            raise ArgumentError("cannot fit a normalizer on zero images")
        stacked = np.stack(pixel_stacks)  # (N, C, H, W)
        mean = stacked.mean(axis=(0, 2, 3), dtype=np.float64)
        std = stacked.std(axis=(0, 2, 3), dtype=np.float64)
        std = np.maximum(std, 1e-6)
        return ChannelNormalizer(_readonly(mean), _readonly(std))

    @staticmethod
    def identity(num_channels: int) -> "ChannelNormalizer":
        return ChannelNormalizer(
            _readonly(np.zeros(num_channels)), _readonly(np.ones(num_channels))
        )

    def apply(self, batch: np.ndarray) -> np.ndarray:
        """Normalize a (N, C, H, W) pixel batch; returns a new array."""
        mean = self.mean.astype(batch.dtype)[None, :, None, None]
        std = self.std.astype(batch.dtype)[None, :, None, None]
        return (batch - mean) / std


def records_to_arrays(
    records: Sequence[FingerprintRecord], dtype=np.float32
) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into (images, labels) arrays: (N, C, H, W) and (N, 2)."""
    if not records:
        raise ArgumentError("cannot stack zero records")
    images = np.stack([r.image.pixels for r in records]).astype(dtype)
    labels = np.stack([r.rp.xy for r in records]).astype(dtype)
    return images, labels


# ---------------------------------------------------------------------------
# on-disk codec

_SCHEMA_VERSION = 1


def _task_dir(root: Path, key: TaskKey) -> Path:
    return root / "tasks" / str(key)


def write_dataset(dataset: FingerprintDataset, path: str | Path) -> None:
    """Write the dataset directory: manifest.json plus one .csif per (task, RP)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": _SCHEMA_VERSION,
        "N_t": dataset.n_packets,
        "num_subcarriers": dataset.num_subcarriers,
        "num_rx_antennas": dataset.num_rx_antennas,
        "areas": [{"id": a.id, "name": a.name} for a in dataset.areas],
        "postures": [{"id": p.id, "name": p.name} for p in dataset.postures],
        "rps": [
            {"id": rp.id, "area_id": rp.area_id, "x_m": rp.location[0], "y_m": rp.location[1]}
            for rp in dataset.rps
        ],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    for key, by_rp in dataset.samples.items():
        task_dir = _task_dir(root, key)
        task_dir.mkdir(parents=True, exist_ok=True)
        for rp_id, images in by_rp.items():
            _write_csif(task_dir / f"rp{rp_id}.csif", images)


def _write_csif(path: Path, images: Sequence[CSIImage]) -> None:
    if not images:
        raise ArgumentError(f"refusing to write an empty sample file {path}")
    c, h, w = images[0].shape
    for img in images:
        if img.shape != (c, h, w):
            raise ShapeError(f"inconsistent image shapes in {path}: {img.shape} vs {(c, h, w)}")
    payload = np.stack([img.pixels for img in images]).astype("<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _CODEC_VERSION, len(images), c, h, w))
        f.write(payload.tobytes())


def _read_csif(path: Path) -> list[CSIImage]:
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    magic, version, k, c, h, w = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != _CODEC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    expected = k * c * h * w * 4
    if len(blob) - _HEADER.size < expected:
        raise FormatError(
            f"{path}: payload needs {expected} bytes for K*C*H*W={k}*{c}*{h}*{w} float32, "
            f"found {len(blob) - _HEADER.size}",
            offset=len(blob),
        )
    if len(blob) - _HEADER.size > expected:
        raise FormatError(f"{path}: {len(blob) - _HEADER.size - expected} trailing bytes", offset=_HEADER.size + expected)
    pixels = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(k, c, h, w)
    return [CSIImage(pixels[i]) for i in range(k)]


def read_dataset(path: str | Path) -> FingerprintDataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != _SCHEMA_VERSION:
        raise FormatError(f"unsupported dataset schema_version {manifest.get('schema_version')!r}")
    areas = [AreaInfo(a["id"], a["name"]) for a in manifest["areas"]]
    postures = [PostureInfo(p["id"], p["name"]) for p in manifest["postures"]]
    rps = [RefPoint(r["id"], r["area_id"], (r["x_m"], r["y_m"])) for r in manifest["rps"]]
    dataset = FingerprintDataset(
        n_packets=manifest["N_t"],
        num_subcarriers=manifest["num_subcarriers"],
        num_rx_antennas=manifest["num_rx_antennas"],
        areas=areas,
        postures=postures,
        rps=rps,
    )
    for area in areas:
        area_rp_ids = [rp.id for rp in rps if rp.area_id == area.id]
        for posture in postures:
            key = TaskKey(area.id, posture.id)
            task_dir = _task_dir(root, key)
            if not task_dir.is_dir():
                continue
            by_rp: dict[int, list[CSIImage]] = {}
            for rp_id in area_rp_ids:
                f = task_dir / f"rp{rp_id}.csif"
                if f.is_file():
                    by_rp[rp_id] = _read_csif(f)
            if by_rp:
                dataset.samples[key] = by_rp
    return dataset
