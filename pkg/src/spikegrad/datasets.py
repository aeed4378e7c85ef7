"""Dataset generation, MNIST ingestion, and spike-time encodings.

Encodings map inputs to lists of (channel, time_ms) pairs; omitted inputs
simply produce no spike.  Generators are pure functions of their seed.
"""

from __future__ import annotations

import gzip
import math
import struct

import numpy as np

T_MAX_IN = 30.0  # input window (ms)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncation, dimension mismatch)."""


def encode_yinyang(x, y, t_max_in=T_MAX_IN):
    """Five-channel latency code: (0, x, y, 1-x, 1-y) * t_max_in."""
    return [
        (0, 0.0),
        (1, x * t_max_in),
        (2, y * t_max_in),
        (3, (1.0 - x) * t_max_in),
        (4, (1.0 - y) * t_max_in),
    ]


def encode_mnist(pixels, t_max_in=T_MAX_IN):
    """Per-pixel latency code: brighter fires earlier, zero pixels omitted."""
    pixels = np.asarray(pixels).reshape(-1)
    spikes = []
    for k in np.nonzero(pixels)[0]:
        spikes.append((int(k), (1.0 - pixels[k] / 255.0) * t_max_in))
    return spikes


# ---------------------------------------------------------------------------
# Yin-Yang
# ---------------------------------------------------------------------------


def yinyang_class(x, y, r_small=0.1, r_big=0.5):
    """Class of a point of the yin-yang figure over [0, 2*r_big]^2.

    0 = yin, 1 = yang, 2 = dot (the two small disks).
    """
    d_right = math.hypot(x - 1.5 * r_big, y - r_big)
    d_left = math.hypot(x - 0.5 * r_big, y - r_big)
    if d_right < r_small or d_left < r_small:
        return 2
    criterion1 = d_right <= r_small
    criterion2 = d_left > r_small and d_right <= 0.5 * r_big
    criterion3 = y > r_big and d_right > 0.5 * r_big
    return 1 if (criterion1 or criterion2 or criterion3) else 0


def generate_yinyang(n, seed, r_small=0.1, r_big=0.5):
    """Class-balanced rejection-sampled yin-yang points.

    Returns (xs, ys, labels) with coordinates in [0, 2*r_big].
    """
    rng = np.random.default_rng(seed)
    xs = np.empty(n)
    ys = np.empty(n)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        goal = int(rng.integers(3))
        while True:
            x, y = rng.uniform(0.0, 2.0 * r_big, 2)
            if math.hypot(x - r_big, y - r_big) > r_big:
                continue
            c = yinyang_class(x, y, r_small, r_big)
            if c == goal:
                break
        xs[i], ys[i], labels[i] = x, y, c
    return xs, ys, labels


def yinyang_samples(n, seed, t_max_in=T_MAX_IN):
    """Encoded yin-yang samples: list of (spike list, label)."""
    xs, ys, labels = generate_yinyang(n, seed)
    return [
        (encode_yinyang(x, y, t_max_in), int(c)) for x, y, c in zip(xs, ys, labels)
    ]


# ---------------------------------------------------------------------------
# delayed-memory XOR
# ---------------------------------------------------------------------------


def generate_delayed_xor(n, t_max=60.0, sigma=1.0, seed=0):
    """Nine-channel delayed-XOR task.

    Channels 0-2 encode input bit value 0, channels 3-5 bit value 1, and
    channels 6-8 the cue.  Two inputs at t0 = 0 and t1 ~ U(0, t_max/3);
    cue at t2 ~ U(t1, t1 + t_max/3); three jittered spikes U(t_x, t_x+sigma)
    per event.  Label is the XOR of the two bits.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        bits = rng.integers(0, 2, size=2)
        t1 = rng.uniform(0.0, t_max / 3.0)
        t2 = rng.uniform(t1, t1 + t_max / 3.0)
        spikes = []
        for t_x, pop in ((0.0, int(bits[0])), (t1, int(bits[1])), (t2, 2)):
            for i in range(3):
                spikes.append((pop * 3 + i, float(rng.uniform(t_x, t_x + sigma))))
        label = int(bits[0] ^ bits[1])
        samples.append((spikes, label))
    return samples


def xor_cue_time(spikes):
    """First spike time on the cue channels (6-8)."""
    return min(t for ch, t in spikes if ch >= 6)


# ---------------------------------------------------------------------------
# MNIST (IDX format)
# ---------------------------------------------------------------------------


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path):
    """Parse an IDX images or labels file (optionally gzip-compressed)."""
    with _open_maybe_gzip(path) as f:
        head = f.read(4)
        if len(head) < 4:
            raise IdxFormatError(f"{path}: truncated header")
        (magic,) = struct.unpack(">i", head)
        if magic == IDX_IMAGES_MAGIC:
            dims = struct.unpack(">iii", f.read(12))
            n, rows, cols = dims
            expected = n * rows * cols
            payload = f.read()
            if len(payload) != expected:
                raise IdxFormatError(
                    f"{path}: expected {expected} pixel bytes, got {len(payload)}"
                )
            return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)
        if magic == IDX_LABELS_MAGIC:
            (n,) = struct.unpack(">i", f.read(4))
            payload = f.read()
            if len(payload) != n:
                raise IdxFormatError(
                    f"{path}: expected {n} label bytes, got {len(payload)}"
                )
            return np.frombuffer(payload, dtype=np.uint8)
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")


def load_mnist(images_path, labels_path):
    """Images as (n, 784) uint8 plus labels, with consistency checks."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: not an images file")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: not a labels file")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}"
        )
    return images.reshape(images.shape[0], -1), labels


# ---------------------------------------------------------------------------
# delimited persistence for generated datasets
# ---------------------------------------------------------------------------


def write_spike_dataset(path, samples):
    """Persist encoded samples: header then (sample, channel, time_ms, label)."""
    with open(path, "w") as f:
        f.write("sample,channel,time_ms,label\n")
        for i, (spikes, label) in enumerate(samples):
            for ch, t in spikes:
                f.write(f"{i},{ch},{t:.9f},{label}\n")


def read_spike_dataset(path):
    """Inverse of write_spike_dataset."""
    samples = {}
    with open(path) as f:
        header = f.readline().strip()
        if header != "sample,channel,time_ms,label":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            sid, ch, t, label = line.strip().split(",")
            sid = int(sid)
            entry = samples.setdefault(sid, ([], int(label)))
            entry[0].append((int(ch), float(t)))
    return [samples[i] for i in sorted(samples)]
