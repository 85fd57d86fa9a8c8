import numpy as np
import pytest

from csi_metaloc.csi_data import (
    AreaInfo,
    CSIImage,
    ChannelNormalizer,
    ChannelResponse,
    FingerprintDataset,
    PostureInfo,
    RefPoint,
    TaskKey,
    build_csi_image,
    image_to_responses,
    read_dataset,
    write_dataset,
)
from csi_metaloc.errors import ArgumentError, FormatError, ShapeError


def random_packets(rng, n_packets, n_rx, n_sub):
    return [
        ChannelResponse(rng.normal(size=(n_rx, n_sub)) + 1j * rng.normal(size=(n_rx, n_sub)))
        for _ in range(n_packets)
    ]


class TestBuildImage:
    def test_reference_shape(self):
        # paper-scale geometry: 60 packets, 30 subcarriers, 3 rx antennas
        rng = np.random.default_rng(0)
        img = build_csi_image(random_packets(rng, 60, 3, 30))
        assert img.shape == (3, 60, 60)

    def test_unit_gain_column(self):
        packet = ChannelResponse(np.ones((1, 2), dtype=complex))
        img = build_csi_image([packet])
        assert img.shape == (1, 4, 1)
        np.testing.assert_array_equal(img.pixels[0, :, 0], [1.0, 1.0, 0.0, 0.0])

    def test_iq_layout(self):
        values = np.array([[1 + 2j, 3 + 4j]])
        img = build_csi_image([ChannelResponse(values)])
        np.testing.assert_array_equal(img.pixels[0, :, 0], [1.0, 3.0, 2.0, 4.0])

    def test_round_trip_oracle(self):
        # splitting at row N and recombining I + jQ must reproduce the packets
        for seed in range(100):
            rng = np.random.default_rng(seed)
            packets = random_packets(rng, 4, 2, 3)
            # float32 image storage: compare against float32-rounded originals
            expected = [p.values.astype(np.complex64).astype(np.complex128) for p in packets]
            back = image_to_responses(build_csi_image(packets))
            assert len(back) == len(packets)
            for e, b in zip(expected, back):
                np.testing.assert_array_equal(b.values, e)

    def test_mismatched_packet_shapes(self):
        rng = np.random.default_rng(1)
        packets = random_packets(rng, 2, 2, 3) + random_packets(rng, 1, 2, 4)
        with pytest.raises(ShapeError, match="packet 2"):
            build_csi_image(packets)

    def test_empty_sequence(self):
        with pytest.raises(ArgumentError):
            build_csi_image([])


class TestImageToResponses:
    def test_zero_image(self):
        img = CSIImage(np.zeros((2, 6, 4), dtype=np.float32))
        for resp in image_to_responses(img):
            np.testing.assert_array_equal(resp.values, np.zeros((2, 3), dtype=complex))

    def test_odd_height_rejected(self):
        with pytest.raises(ShapeError):
            CSIImage(np.zeros((1, 5, 2), dtype=np.float32))


class TestValidation:
    def test_non_finite_response(self):
        values = np.ones((1, 2), dtype=complex)
        values[0, 0] = np.nan + 0j
        with pytest.raises(ArgumentError):
            ChannelResponse(values)

    def test_non_finite_image(self):
        pixels = np.zeros((1, 2, 2), dtype=np.float32)
        pixels[0, 0, 0] = np.inf
        with pytest.raises(ArgumentError):
            CSIImage(pixels)

    def test_image_immutable(self):
        img = CSIImage(np.zeros((1, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1.0

    def test_refpoint_dimensions(self):
        with pytest.raises(ShapeError):
            RefPoint(0, 0, (1.0, 2.0, 3.0))


def tiny_dataset(seed=0, n_rx=2, n_sub=3, n_packets=4, first_rp_xy=(0.0, 0.0)):
    rng = np.random.default_rng(seed)
    areas = [AreaInfo(0, "area-0"), AreaInfo(1, "area-1")]
    postures = [PostureInfo(0, "standing"), PostureInfo(1, "walking")]
    rps = [
        RefPoint(0, 0, first_rp_xy),
        RefPoint(1, 0, (0.6, 0.0)),
        RefPoint(2, 1, (0.0, 0.0)),
        RefPoint(3, 1, (2.0, 0.0)),
    ]
    ds = FingerprintDataset(n_packets, n_sub, n_rx, areas, postures, rps)
    for area in areas:
        for posture in postures:
            key = TaskKey(area.id, posture.id)
            ds.samples[key] = {}
            for rp in rps:
                if rp.area_id != area.id:
                    continue
                ds.samples[key][rp.id] = [
                    build_csi_image(random_packets(rng, n_packets, n_rx, n_sub)) for _ in range(3)
                ]
    return ds


class TestCodec:
    def test_round_trip_identity(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert back.equals(ds)
        assert ds.equals(back)

    def test_coordinates_full_precision(self, tmp_path):
        ds = tiny_dataset(first_rp_xy=(0.1 + 0.2, 1e-17))
        write_dataset(ds, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert back.rps[0].location == ds.rps[0].location == (0.30000000000000004, 1e-17)

    def test_bad_magic(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path / "ds")
        f = next((tmp_path / "ds" / "tasks").rglob("*.csif"))
        blob = bytearray(f.read_bytes())
        blob[:4] = b"JUNK"
        f.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            read_dataset(tmp_path / "ds")

    def test_truncated_payload(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path / "ds")
        f = next((tmp_path / "ds" / "tasks").rglob("*.csif"))
        blob = f.read_bytes()
        f.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(FormatError, match="payload"):
            read_dataset(tmp_path / "ds")

    def test_error_carries_offset(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path / "ds")
        f = next((tmp_path / "ds" / "tasks").rglob("*.csif"))
        f.write_bytes(f.read_bytes()[:10])
        with pytest.raises(FormatError) as err:
            read_dataset(tmp_path / "ds")
        assert err.value.offset is not None

    def test_seeded_round_trips(self, tmp_path):
        for seed in range(10):
            ds = tiny_dataset(seed=seed)
            write_dataset(ds, tmp_path / f"ds{seed}")
            assert read_dataset(tmp_path / f"ds{seed}").equals(ds)


class TestNormalizer:
    def test_fit_statistics(self):
        rng = np.random.default_rng(3)
        images = [CSIImage(rng.normal(2.0, 3.0, size=(2, 4, 5))) for _ in range(40)]
        norm = ChannelNormalizer.fit(images)
        batch = np.stack([img.pixels for img in images])
        out = norm.apply(batch)
        assert abs(out.mean()) < 1e-5
        assert abs(out.std() - 1.0) < 1e-3

    def test_identity(self):
        norm = ChannelNormalizer.identity(2)
        batch = np.arange(16, dtype=np.float32).reshape(1, 2, 2, 4)
        np.testing.assert_array_equal(norm.apply(batch), batch)

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            ChannelNormalizer.fit([])
