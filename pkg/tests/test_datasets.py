import gzip
import math
import struct

import numpy as np
import pytest

from spikegrad.datasets import (
    IdxFormatError,
    encode_mnist,
    encode_yinyang,
    generate_delayed_xor,
    generate_yinyang,
    load_mnist,
    read_idx,
    read_spike_dataset,
    write_spike_dataset,
    xor_cue_time,
    yinyang_class,
    yinyang_samples,
)


class TestEncodings:
    def test_yinyang_vector(self):
        spikes = encode_yinyang(0.2, 0.6)
        assert spikes == [(0, 0.0), (1, 6.0), (2, 18.0), (3, 24.0), (4, 12.0)]
        assert encode_yinyang(0.0, 0.0) == [
            (0, 0.0),
            (1, 0.0),
            (2, 0.0),
            (3, 30.0),
            (4, 30.0),
        ]
        assert encode_yinyang(1.0, 1.0) == [
            (0, 0.0),
            (1, 30.0),
            (2, 30.0),
            (3, 0.0),
            (4, 0.0),
        ]

    def test_mnist_latency(self):
        px = np.zeros(784, dtype=np.uint8)
        px[0] = 255
        px[1] = 0
        px[2] = 102
        spikes = dict(encode_mnist(px))
        assert spikes[0] == 0.0
        assert 1 not in spikes  # zero pixel omitted
        assert spikes[2] == pytest.approx((1.0 - 0.4) * 30.0)

    def test_mnist_order_preserved(self):
        px = np.arange(1, 256, dtype=np.uint8)
        spikes = encode_mnist(px)
        times = [t for _, t in spikes]
        assert all(a > b for a, b in zip(times, times[1:]))


class TestYinYang:
    def test_deterministic(self):
        a = generate_yinyang(100, seed=5)
        b = generate_yinyang(100, seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_class_balance(self):
        _, _, labels = generate_yinyang(3000, seed=1)
        counts = np.bincount(labels, minlength=3) / 3000.0
        assert np.all(np.abs(counts - 1.0 / 3.0) < 0.05)

    def test_dot_centres_are_dot_class(self):
        assert yinyang_class(0.75, 0.5) == 2
        assert yinyang_class(0.25, 0.5) == 2

    def test_points_inside_figure(self):
        xs, ys, _ = generate_yinyang(500, seed=2)
        d = np.hypot(xs - 0.5, ys - 0.5)
        assert np.all(d <= 0.5 + 1e-12)

    def test_sample_encoding(self):
        samples = yinyang_samples(10, seed=0)
        assert len(samples) == 10
        for spikes, label in samples:
            assert len(spikes) == 5
            assert label in (0, 1, 2)
            assert all(0.0 <= t <= 30.0 for _, t in spikes)


class TestDelayedXor:
    def test_labels_are_xor(self):
        samples = generate_delayed_xor(400, seed=0)
        for spikes, label in samples:
            pops = {ch // 3 for ch, _ in spikes}
            has0 = 0 in pops
            has1 = 1 in pops
            assert 2 in pops  # cue always present
            if has0 and has1:
                assert label == 1
            else:
                assert label == 0

    def test_time_support(self):
        t_max = 60.0
        samples = generate_delayed_xor(1000, t_max=t_max, sigma=1.0, seed=3)
        for spikes, _ in samples:
            cue = xor_cue_time(spikes)
            bit_times = sorted(t for ch, t in spikes if ch < 6)
            assert bit_times[0] < 1.0  # first event at t0 = 0 (plus jitter)
            assert max(t for _, t in spikes) <= 2 * t_max / 3.0 + 1.0 + 1e-9
            assert cue >= bit_times[0]

    def test_cue_channels(self):
        samples = generate_delayed_xor(50, seed=9)
        for spikes, _ in samples:
            cue_spikes = [ch for ch, _ in spikes if ch >= 6]
            assert sorted(cue_spikes) == [6, 7, 8]


class TestIdx:
    def _write_images(self, path, n=3, rows=2, cols=2, gzipped=False):
        payload = struct.pack(">iiii", 0x00000803, n, rows, cols)
        payload += bytes(range(n * rows * cols))
        opener = gzip.open if gzipped else open
        with opener(path, "wb") as f:
            f.write(payload)

    def test_images_roundtrip(self, tmp_path):
        p = tmp_path / "imgs.idx"
        self._write_images(p)
        arr = read_idx(p)
        assert arr.shape == (3, 2, 2)
        assert arr.dtype == np.uint8
        assert arr[0, 0, 1] == 1

    def test_gzip_supported(self, tmp_path):
        p = tmp_path / "imgs.idx.gz"
        self._write_images(p, gzipped=True)
        assert read_idx(p).shape == (3, 2, 2)

    def test_labels(self, tmp_path):
        p = tmp_path / "labels.idx"
        with open(p, "wb") as f:
            f.write(struct.pack(">ii", 0x00000801, 4) + bytes([0, 9, 3, 7]))
        labels = read_idx(p)
        assert labels.tolist() == [0, 9, 3, 7]
        assert labels.min() >= 0 and labels.max() <= 9

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "bad.idx"
        with open(p, "wb") as f:
            f.write(struct.pack(">iiii", 0x00000803, 10, 28, 28) + b"xy")
        with pytest.raises(IdxFormatError, match="expected 7840 pixel bytes, got 2"):
            read_idx(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        with open(p, "wb") as f:
            f.write(struct.pack(">i", 0x12345678))
        with pytest.raises(IdxFormatError, match="bad magic"):
            read_idx(p)

    def test_load_mnist_count_mismatch(self, tmp_path):
        imgs = tmp_path / "im.idx"
        self._write_images(imgs, n=3)
        lab = tmp_path / "lb.idx"
        with open(lab, "wb") as f:
            f.write(struct.pack(">ii", 0x00000801, 2) + bytes([1, 2]))
        with pytest.raises(IdxFormatError, match="mismatch"):
            load_mnist(imgs, lab)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        samples = yinyang_samples(7, seed=4)
        p = tmp_path / "ds.csv"
        write_spike_dataset(p, samples)
        back = read_spike_dataset(p)
        assert len(back) == 7
        for (s1, l1), (s2, l2) in zip(samples, back):
            assert l1 == l2
            assert len(s1) == len(s2)
            for (c1, t1), (c2, t2) in zip(s1, s2):
                assert c1 == c2
                assert abs(t1 - t2) < 1e-9

    def test_byte_determinism(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_spike_dataset(a, yinyang_samples(20, seed=11))
        write_spike_dataset(b, yinyang_samples(20, seed=11))
        assert a.read_bytes() == b.read_bytes()
