import numpy as np
import pytest

from pcvnet.data import (
    ManifestEntry,
    SynthConfig,
    clip_sample,
    load_manifest,
    load_pcv,
    normalize_video,
    read_pcv,
    resample_frame,
    save_manifest,
    save_pcv,
    synth_generate,
    synth_video,
    validate_manifest,
    write_pcv,
)
from pcvnet.errors import (
    BadMagicError,
    ChannelCountError,
    DataError,
    LabelRangeError,
    MissingFileError,
    TruncatedPayloadError,
    UnknownSplitError,
)
from pcvnet.geometry import PointCloudFrame, PointCloudVideo


def random_video(t=4, n=16, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloudVideo(
        [PointCloudFrame(rng.normal(size=(n, 3)).astype(np.float32)) for _ in range(t)]
    )


class TestPcvFormat:
    def test_round_trip_bit_exact(self):
        video = random_video()
        back = read_pcv(write_pcv(video))
        np.testing.assert_array_equal(back.as_array(), video.as_array())
        assert back.as_array().dtype == np.float32

    def test_file_round_trip(self, tmp_path):
        video = random_video(seed=3)
        save_pcv(tmp_path / "v.pcv", video)
        again = load_pcv(tmp_path / "v.pcv")
        np.testing.assert_array_equal(again.as_array(), video.as_array())

    def test_bad_magic(self):
        data = b"PCV2" + b"\x00" * 32
        with pytest.raises(BadMagicError):
            read_pcv(data)

    def test_truncated_payload(self):
        import struct

        # header promises 2*3*3 = 18 floats, give 17
        data = b"PCV1" + struct.pack("<III", 2, 3, 3) + b"\x00" * (17 * 4)
        with pytest.raises(TruncatedPayloadError):
            read_pcv(data)

    def test_wrong_channel_count(self):
        import struct

        data = b"PCV1" + struct.pack("<III", 2, 3, 4) + b"\x00" * (24 * 4)
        with pytest.raises(ChannelCountError):
            read_pcv(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_pcv(tmp_path / "nope.pcv")


class TestManifest:
    def _write_dataset(self, tmp_path, entries):
        for e in entries:
            save_pcv(tmp_path / e.path, random_video(seed=e.label))
        save_manifest(tmp_path / "manifest.jsonl", entries)
        return tmp_path / "manifest.jsonl"

    def test_round_trip(self, tmp_path):
        entries = [
            ManifestEntry("a.pcv", 0, "train", 1),
            ManifestEntry("b.pcv", 1, "test", None),
        ]
        path = self._write_dataset(tmp_path, entries)
        loaded = load_manifest(path)
        assert loaded == entries
        validate_manifest(loaded, tmp_path)

    def test_missing_file_rejected(self, tmp_path):
        entries = [ManifestEntry("a.pcv", 0, "train")]
        save_manifest(tmp_path / "manifest.jsonl", entries)
        with pytest.raises(MissingFileError):
            validate_manifest(entries, tmp_path)

    def test_noncontiguous_labels_rejected(self, tmp_path):
        entries = [
            ManifestEntry("a.pcv", 0, "train"),
            ManifestEntry("b.pcv", 2, "train"),
        ]
        self._write_dataset(tmp_path, entries)
        with pytest.raises(LabelRangeError):
            validate_manifest(entries, tmp_path)

    def test_unknown_split_rejected(self, tmp_path):
        entries = [ManifestEntry("a.pcv", 0, "validation")]
        self._write_dataset(tmp_path, entries)
        with pytest.raises(UnknownSplitError):
            validate_manifest(entries, tmp_path)

    def test_listed_file_must_parse(self, tmp_path):
        entries = [ManifestEntry("a.pcv", 0, "train")]
        (tmp_path / "a.pcv").write_bytes(b"not a pcv file at all")
        with pytest.raises(BadMagicError):
            validate_manifest(entries, tmp_path)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(DataError):
            validate_manifest([], tmp_path)


class TestSynth:
    def test_static_class_noise_free(self):
        cfg = SynthConfig(noise_sigma=0.0, points=32, frames=5)
        video = synth_video(cfg, label=0, sample_index=0)
        arr = video.as_array()
        for t in range(1, 5):
            np.testing.assert_array_equal(arr[t], arr[0])

    def test_rotation_matches_inverse_rotation_oracle(self):
        cfg = SynthConfig(noise_sigma=0.0, points=64, frames=6)
        arr = synth_video(cfg, label=3, sample_index=2).as_array().astype(np.float64)
        for t in range(6):
            theta = np.deg2rad(10.0 * t)
            c, s = np.cos(theta), np.sin(theta)
            inv = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])
            recovered = arr[t] @ inv.T
            assert np.abs(recovered - arr[0]).max() < 1e-5

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = SynthConfig(points=16, frames=3, samples_per_class=2, num_classes=2)
        synth_generate(cfg, tmp_path / "a")
        synth_generate(cfg, tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_split_counts_and_validity(self, tmp_path):
        cfg = SynthConfig(samples_per_class=5, num_classes=3, points=16, frames=3)
        entries = synth_generate(cfg, tmp_path)
        assert len(entries) == 15
        assert sum(e.split == "train" for e in entries) == 12
        validate_manifest(load_manifest(tmp_path / "manifest.jsonl"), tmp_path)

    def test_mean_displacement_1nn_separability(self):
        # classes are geometrically separable from mean per-frame displacement
        # vectors alone; leave-one-out 1-NN should be essentially perfect
        cfg = SynthConfig(noise_sigma=0.0, points=128, frames=8, samples_per_class=20)
        feats, labels = [], []
        for label in range(cfg.num_classes):
            for i in range(cfg.samples_per_class):
                arr = synth_video(cfg, label, i).as_array().astype(np.float64)
                disp = arr[1:] - arr[:-1]  # [T-1, N, 3]
                feats.append(disp.mean(axis=1).ravel())
                labels.append(label)
        feats = np.stack(feats)
        labels = np.array(labels)
        d = ((feats[:, None] - feats[None]) ** 2).sum(-1)
        np.fill_diagonal(d, np.inf)
        pred = labels[d.argmin(axis=1)]
        assert (pred == labels).mean() >= 0.99


class TestClips:
    def test_full_length_single_clip(self):
        video = random_video(t=6)
        for mode in ("random_start", "uniform_cover"):
            clips = clip_sample(video, 6, mode=mode, seed=0)
            assert len(clips) == 1
            np.testing.assert_array_equal(clips[0].as_array(), video.as_array())

    def test_uniform_cover_spacing(self):
        video = random_video(t=10)
        clips = clip_sample(video, 4, mode="uniform_cover")
        starts = [
            int(np.argmax([np.array_equal(c.frames[0].coords, f.coords) for f in video.frames]))
            for c in clips
        ]
        assert starts == [0, 3, 6]

    def test_uniform_cover_covers_all_frames(self):
        for t in range(4, 20):
            video = random_video(t=t, n=4)
            clips = clip_sample(video, 4, mode="uniform_cover")
            n = -(-t // 4)
            starts = [int(np.floor(i * (t - 4) / max(n - 1, 1))) for i in range(n)]
            covered = set()
            for s in starts:
                covered.update(range(s, s + 4))
            assert covered == set(range(t))

    def test_random_start_reproducible(self):
        video = random_video(t=12)
        a = clip_sample(video, 4, mode="random_start", seed=9)[0]
        b = clip_sample(video, 4, mode="random_start", seed=9)[0]
        np.testing.assert_array_equal(a.as_array(), b.as_array())

    def test_too_long_clip(self):
        video = random_video(t=4)
        with pytest.raises(DataError):
            clip_sample(video, 5)


class TestNormalize:
    def test_idempotent(self):
        video = random_video(seed=11)
        once = normalize_video(video)
        twice = normalize_video(once)
        assert np.abs(once.as_array() - twice.as_array()).max() < 1e-6

    def test_translation_removed(self):
        video = random_video(seed=12)
        shifted = PointCloudVideo(
            [PointCloudFrame(f.coords + np.float32(5.0)) for f in video.frames]
        )
        a = normalize_video(video).as_array()
        b = normalize_video(shifted).as_array()
        assert np.abs(a - b).max() < 1e-5

    def test_scale_by_frame0_radius(self):
        base = np.array([[2, 0, 0], [-2, 0, 0], [0, 2, 0], [0, -2, 0]], dtype=np.float32)
        video = PointCloudVideo([PointCloudFrame(base), PointCloudFrame(base * 0.5)])
        out = normalize_video(video).as_array()
        np.testing.assert_allclose(out[0], base / 2.0, atol=1e-6)
        np.testing.assert_allclose(out[1], base / 4.0, atol=1e-6)

    def test_degenerate_frame_scale_fallback(self):
        pts = np.ones((4, 3), dtype=np.float32)
        video = PointCloudVideo([PointCloudFrame(pts), PointCloudFrame(pts * 2)])
        out = normalize_video(video).as_array()
        np.testing.assert_allclose(out[0], 0.0, atol=1e-6)


class TestResample:
    def test_identity_when_counts_match(self):
        f = PointCloudFrame(np.random.default_rng(0).normal(size=(8, 3)))
        out = resample_frame(f, 8)
        np.testing.assert_array_equal(out.coords, f.coords)

    def test_pad_near_copies(self):
        f = PointCloudFrame(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
        out = resample_frame(f, 4, seed=0)
        assert out.num_points == 4
        assert np.abs(out.coords - f.coords[0]).max() < 1e-3

    def test_downsample_is_subset(self):
        coords = np.random.default_rng(1).normal(size=(256, 3)).astype(np.float32)
        out = resample_frame(PointCloudFrame(coords), 64)
        rows = {tuple(r) for r in coords.tolist()}
        assert all(tuple(r) in rows for r in out.coords.tolist())
