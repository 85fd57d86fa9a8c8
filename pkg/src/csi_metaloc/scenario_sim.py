"""Seeded synthetic generator of multi-area, multi-posture CSI fingerprint data.

The generator stands in for physical survey campaigns: it produces one
fingerprint task per (subarea, posture) combination with controllable
inter-task distribution shift.

Channel model
-------------
Each subarea gets a virtual transmitter and ``num_paths - 1`` scatter anchors
drawn once from the subarea's geometry substream. For a receive antenna at
position ``r`` the per-path propagation lengths are

    D_0 = |tx - r|                      (direct path)
    D_l = |tx - anchor_l| + |anchor_l - r|   (scattered paths)

Delays are expressed as excess path length relative to the direct path of
antenna 0 (packet synchronization removes the common bulk delay), so a
single-path link has an exactly flat frequency response. Subcarrier ``n`` of
antenna ``i`` then sees

    H_i(n) = sum_l  g_l * m_l * exp(-j*2*pi*(D_l,i - D_0,0)*(f_c + n*f_bw/N))
             + noise

with per-path complex gains ``g_l`` decaying geometrically and with the total
path length, and ``m_l`` a posture-specific perturbation: per-path log-gain
jitter and excess-delay jitter drawn from the posture substream and scaled by
``posture_perturbation`` (zero perturbation makes all postures identical).
Per-packet complex Gaussian noise of scale ``noise_std`` makes the columns of
a fingerprint image differ.

Randomness
----------
All draws come from counter-based Philox streams keyed by named substreams:
``SeedSequence(seed, spawn_key=(kind, *ids))`` where ``kind`` is one of the
``_STREAM_*`` constants and ``ids`` identifies the (area), (posture) or
(area, posture, rp, sample). Generation is therefore a pure function of the
config, and any (task, RP, sample) slice can be regenerated in isolation,
which makes parallel generation equal to sequential generation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .csi_data import (
    AreaInfo,
    CSIImage,
    FingerprintDataset,
    PostureInfo,
    RefPoint,
    TaskKey,
)
from .errors import ArgumentError

# substream kinds (first element of every spawn key)
_STREAM_GEOMETRY = 0
_STREAM_POSTURE = 1
_STREAM_NOISE = 2

# internal channel-model constants (dimensionless fingerprints; lengths in meters)
_CARRIER_CYCLES_PER_M = 5.0     # phase rotation per meter of excess path
_BANDWIDTH_CYCLES_PER_M = 0.5   # extra rotation across the band per meter
_PATH_GAIN_DECAY = 0.75         # geometric decay of per-path base gain
_ANTENNA_SPACING_M = 0.06       # uniform linear rx array along x
_POSTURE_DELAY_JITTER_M = 0.5   # scale of posture-induced excess delay


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of a synthetic scenario; generation is pure in this."""

    num_subareas: int
    postures: tuple[int, ...]
    rp_grid: tuple[int, int]            # rows, cols of the per-subarea RP grid
    rp_spacing_m: tuple[float, ...]     # grid spacing per subarea
    num_paths: int
    noise_std: float
    posture_perturbation: float
    samples_per_rp: int
    seed: int
    n_packets: int
    num_subcarriers: int
    num_rx_antennas: int

    def __post_init__(self):
        problems = []
        if self.num_subareas < 1:
            problems.append("num_subareas must be >= 1")
        if len(self.postures) < 1:
            problems.append("at least one posture is required")
        if len(set(self.postures)) != len(self.postures):
            problems.append("posture ids must be unique")
        if self.rp_grid[0] < 1 or self.rp_grid[1] < 1:
            problems.append("rp_grid must have at least one row and column")
        if len(self.rp_spacing_m) != self.num_subareas:
            problems.append("rp_spacing_m needs one entry per subarea")
        if any(s <= 0 for s in self.rp_spacing_m):
            problems.append("rp spacing must be positive")
        if self.num_paths < 1:
            problems.append("num_paths must be >= 1")
        if self.noise_std < 0:
            problems.append("noise_std must be >= 0")
        if self.posture_perturbation < 0:
            problems.append("posture_perturbation must be >= 0")
        if self.samples_per_rp < 1:
            problems.append("samples_per_rp must be >= 1")
        if min(self.n_packets, self.num_subcarriers, self.num_rx_antennas) < 1:
            problems.append("n_packets, num_subcarriers and num_rx_antennas must be >= 1")
        if problems:
            raise ArgumentError("; ".join(problems))
        object.__setattr__(self, "postures", tuple(int(p) for p in self.postures))
        object.__setattr__(self, "rp_grid", (int(self.rp_grid[0]), int(self.rp_grid[1])))
        object.__setattr__(self, "rp_spacing_m", tuple(float(s) for s in self.rp_spacing_m))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "ScenarioConfig":
        raw = json.loads(text)
        raw["postures"] = tuple(raw["postures"])
        raw["rp_grid"] = tuple(raw["rp_grid"])
        raw["rp_spacing_m"] = tuple(raw["rp_spacing_m"])
        return ScenarioConfig(**raw)


def scenario_like_paper(seed: int = 7) -> ScenarioConfig:
    """Reference scenario: 5 subareas x 5 postures = 25 tasks.

    Mirrors the reported survey geometry: RPs 0.6 m apart in subareas 0-3 and
    2.0 m apart in subarea 4, with 60-packet images over 30 subcarriers and a
    3-antenna receiver. Grid size and sample counts are simulator choices.
    """
    return ScenarioConfig(
        num_subareas=5,
        postures=(0, 1, 2, 3, 4),
        rp_grid=(2, 3),
        rp_spacing_m=(0.6, 0.6, 0.6, 0.6, 2.0),
        num_paths=5,
        noise_std=0.05,
        posture_perturbation=0.05,
        samples_per_rp=25,
        seed=seed,
        n_packets=60,
        num_subcarriers=30,
        num_rx_antennas=3,
    )


def _substream(config_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(config_seed, spawn_key=key)))


@dataclass(frozen=True)
class _AreaGeometry:
    tx: np.ndarray            # (2,)
    anchors: np.ndarray       # (num_paths - 1, 2)
    path_phases: np.ndarray   # (num_paths,) static per-path phase offsets


def _area_geometry(config: ScenarioConfig, area_id: int) -> _AreaGeometry:
    rows, cols = config.rp_grid
    spacing = config.rp_spacing_m[area_id]
    extent = np.array([(cols - 1) * spacing, (rows - 1) * spacing])
    rng = _substream(config.seed, _STREAM_GEOMETRY, area_id)
    tx = np.array([rng.uniform(-4.0, -1.0), rng.uniform(0.0, max(extent[1], 1.0))])
    anchors = np.column_stack(
        [
            rng.uniform(-3.0, extent[0] + 3.0, size=config.num_paths - 1),
            rng.uniform(-3.0, extent[1] + 3.0, size=config.num_paths - 1),
        ]
    ).reshape(config.num_paths - 1, 2)
    path_phases = rng.uniform(0.0, 2.0 * np.pi, size=config.num_paths)
    return _AreaGeometry(tx, anchors, path_phases)


def _posture_jitter(config: ScenarioConfig, posture_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-path (log-gain jitter, excess-delay jitter), shared across subareas."""
    rng = _substream(config.seed, _STREAM_POSTURE, posture_id)
    gain = rng.normal(size=config.num_paths)
    delay = rng.normal(size=config.num_paths)
    delay[0] = 0.0  # direct path defines the sync reference
    return gain, delay


def multipath_frequency_response(
    excess_lengths_m: np.ndarray,
    gains: np.ndarray,
    num_subcarriers: int,
) -> np.ndarray:
    """Noise-free response over the band for one antenna.

    ``excess_lengths_m[l]`` is path l's propagation length in excess of the
    sync reference; a zero-excess path contributes a constant across all
    subcarriers.
    """
    n = np.arange(num_subcarriers)
    cycles_per_m = _CARRIER_CYCLES_PER_M + n * (_BANDWIDTH_CYCLES_PER_M / num_subcarriers)
    phase = -2.0 * np.pi * np.outer(excess_lengths_m, cycles_per_m)  # (L, N)
    return (gains[:, None] * np.exp(1j * phase)).sum(axis=0)


def _deterministic_response(
    config: ScenarioConfig,
    geometry: _AreaGeometry,
    rp_xy: np.ndarray,
    posture_gain_jitter: np.ndarray,
    posture_delay_jitter: np.ndarray,
) -> np.ndarray:
    """Noise-free (antennas, subcarriers) response at one reference point."""
    out = np.empty((config.num_rx_antennas, config.num_subcarriers), dtype=np.complex128)
    antenna_offsets = (np.arange(config.num_rx_antennas) - (config.num_rx_antennas - 1) / 2.0)
    gain_mult = np.exp(config.posture_perturbation * posture_gain_jitter)
    delay_add = config.posture_perturbation * posture_delay_jitter * _POSTURE_DELAY_JITTER_M

    # sync reference: direct-path length at antenna 0
    ant0 = rp_xy + np.array([antenna_offsets[0] * _ANTENNA_SPACING_M, 0.0])
    ref_length = float(np.linalg.norm(geometry.tx - ant0))

    for i in range(config.num_rx_antennas):
        ant = rp_xy + np.array([antenna_offsets[i] * _ANTENNA_SPACING_M, 0.0])
        direct = float(np.linalg.norm(geometry.tx - ant))
        lengths = [direct]
        for a in geometry.anchors:
            lengths.append(float(np.linalg.norm(geometry.tx - a) + np.linalg.norm(a - ant)))
        lengths = np.asarray(lengths)
        base_gain = _PATH_GAIN_DECAY ** np.arange(config.num_paths) / (1.0 + lengths)
        gains = base_gain * gain_mult * np.exp(1j * geometry.path_phases)
        excess = lengths - ref_length + delay_add
        out[i] = multipath_frequency_response(excess, gains, config.num_subcarriers)
    return out


def _sample_image(
    config: ScenarioConfig,
    response: np.ndarray,
    area_id: int,
    posture_id: int,
    rp_id: int,
    sample_index: int,
) -> CSIImage:
    """One fingerprint image: the deterministic response plus per-packet noise."""
    rng = _substream(config.seed, _STREAM_NOISE, area_id, posture_id, rp_id, sample_index)
    shape = (config.n_packets,) + response.shape
    noise = config.noise_std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    packets = response[None, :, :] + noise  # (T, C, N)
    pixels = np.concatenate([packets.real, packets.imag], axis=2)  # (T, C, 2N)
    return CSIImage(pixels.transpose(1, 2, 0).astype(np.float32))


def _build_rps(config: ScenarioConfig) -> list[RefPoint]:
    rps = []
    next_id = 0
    rows, cols = config.rp_grid
    for area_id in range(config.num_subareas):
        spacing = config.rp_spacing_m[area_id]
        for r in range(rows):
            for c in range(cols):
                rps.append(RefPoint(next_id, area_id, (c * spacing, r * spacing)))
                next_id += 1
    return rps


_POSTURE_NAMES = ("standing", "walking", "squatting", "crowd", "mixed")


def generate_scenario(config: ScenarioConfig) -> FingerprintDataset:
    """Generate the full dataset: one task group per (subarea, posture)."""
    rps = _build_rps(config)
    dataset = FingerprintDataset(
        n_packets=config.n_packets,
        num_subcarriers=config.num_subcarriers,
        num_rx_antennas=config.num_rx_antennas,
        areas=[AreaInfo(a, f"area-{a + 1}") for a in range(config.num_subareas)],
        postures=[
            PostureInfo(p, _POSTURE_NAMES[p] if p < len(_POSTURE_NAMES) else f"posture-{p}")
            for p in config.postures
        ],
        rps=rps,
    )
    for area_id in range(config.num_subareas):
        geometry = _area_geometry(config, area_id)
        area_rps = [rp for rp in rps if rp.area_id == area_id]
        for posture_id in config.postures:
            gain_jit, delay_jit = _posture_jitter(config, posture_id)
            by_rp: dict[int, list[CSIImage]] = {}
            for rp in area_rps:
                response = _deterministic_response(config, geometry, rp.xy, gain_jit, delay_jit)
                by_rp[rp.id] = [
                    _sample_image(config, response, area_id, posture_id, rp.id, s)
                    for s in range(config.samples_per_rp)
                ]
            dataset.samples[TaskKey(area_id, posture_id)] = by_rp
    return dataset


def generate_task_samples(
    config: ScenarioConfig, area_id: int, posture_id: int, rp_id: int
) -> list[CSIImage]:
    """Regenerate one (task, RP) slice in isolation; equals the full-run slice."""
    rps = {rp.id: rp for rp in _build_rps(config)}
    if rp_id not in rps or rps[rp_id].area_id != area_id:
        raise ArgumentError(f"rp {rp_id} does not belong to subarea {area_id}")
    geometry = _area_geometry(config, area_id)
    gain_jit, delay_jit = _posture_jitter(config, posture_id)
    response = _deterministic_response(config, geometry, rps[rp_id].xy, gain_jit, delay_jit)
    return [
        _sample_image(config, response, area_id, posture_id, rp_id, s)
        for s in range(config.samples_per_rp)
    ]


def small_scenario(
    seed: int = 0,
    num_subareas: int = 2,
    postures: Sequence[int] = (0, 1),
    noise_std: float = 0.05,
    posture_perturbation: float = 0.1,
    samples_per_rp: int = 6,
    rp_grid: tuple[int, int] = (1, 3),
    num_rx_antennas: int = 1,
    n_packets: int = 6,
    num_subcarriers: int = 8,
) -> ScenarioConfig:
    """Desk-scale scenario for tests and quick experiments."""
    return ScenarioConfig(
        num_subareas=num_subareas,
        postures=tuple(postures),
        rp_grid=rp_grid,
        rp_spacing_m=tuple(0.6 for _ in range(num_subareas)),
        num_paths=3,
        noise_std=noise_std,
        posture_perturbation=posture_perturbation,
        samples_per_rp=samples_per_rp,
        seed=seed,
        n_packets=n_packets,
        num_subcarriers=num_subcarriers,
        num_rx_antennas=num_rx_antennas,
    )


def scenario_variant(config: ScenarioConfig, **overrides) -> ScenarioConfig:
    """Copy a config with field overrides (thin wrapper over dataclasses.replace)."""
    return replace(config, **overrides)
