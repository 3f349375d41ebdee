"""Dataset ingestion and preprocessing.

Covers the CIFAR-10 binary record format (1 label byte + 3072 channel-
planar pixel bytes per record), a deterministic synthetic classification
set for fast tests, flip/shift augmentation, and event-camera streams
accumulated into per-step count frames.

Event files use a little-endian container: a 16-byte header of magic
``EVS1``, u16 width, u16 height, u64 record count, followed by 9-byte
records of (u32 timestamp in microseconds, u16 x, u16 y, u8 polarity),
sorted by timestamp.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
EVENT_MAGIC = b"EVS1"
EVENT_HEADER = struct.Struct("<4sHHQ")
EVENT_RECORD = struct.Struct("<IHHB")


class DataFormatError(ValueError):
    """Raised on malformed dataset bytes."""


@dataclass
class LabeledImages:
    """A split of images [N, C, H, W] in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "LabeledImages":
        return LabeledImages(self.images[:n], self.labels[:n])


class EventRecord(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


@dataclass
class FrameSequence:
    """T per-polarity count frames [2, h, w] for one event stream."""

    frames: np.ndarray  # [T, 2, h, w]
    label: int = -1


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------


def load_cifar10_binary(path: str) -> LabeledImages:
    """Read one CIFAR-10 binary batch file.

    Each record is exactly 3073 bytes: the label byte, then 3072 pixel
    bytes row-major in channel planes R, G, B.  Pixels map to [0, 1] by
    v / 255; record order is preserved.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % CIFAR_RECORD:
        full = len(raw) // CIFAR_RECORD
        raise DataFormatError(
            f"{path}: truncated record at byte {full * CIFAR_RECORD}; "
            f"file length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = buf[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataFormatError(f"{path}: label byte {labels[bad[0]]} > 9 in record {bad[0]}")
    images = buf[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return LabeledImages(images, labels)


def save_cifar10_binary(path: str, data: LabeledImages) -> None:
    """Write images back to the binary record format (inverse of load)."""
    pixels = np.rint(data.images * 255.0).astype(np.uint8).reshape(len(data), CIFAR_PIXELS)
    out = np.empty((len(data), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = data.labels.astype(np.uint8)
    out[:, 1:] = pixels
    with open(path, "wb") as fh:
        fh.write(out.tobytes())


def load_cifar10_dir(root: str) -> tuple[LabeledImages, LabeledImages]:
    """Load the standard binary distribution layout: data_batch_1..5.bin
    for training and test_batch.bin for testing."""
    trains = []
    for i in range(1, 6):
        p = os.path.join(root, f"data_batch_{i}.bin")
        if os.path.exists(p):
            trains.append(load_cifar10_binary(p))
    if not trains:
        raise DataFormatError(f"{root}: no data_batch_*.bin files found")
    train = LabeledImages(np.concatenate([t.images for t in trains]),
                          np.concatenate([t.labels for t in trains]))
    test = load_cifar10_binary(os.path.join(root, "test_batch.bin"))
    return train, test


def resolve_data_root(explicit: str | None = None) -> str | None:
    """Dataset root from the CLI flag or the MTSNN_DATA environment variable."""
    if explicit:
        return explicit
    return os.environ.get("MTSNN_DATA")


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def augment(image: np.ndarray, rng: np.random.Generator,
            max_shift_frac: float = 0.1) -> np.ndarray:
    """Random horizontal flip (p = 0.5) plus height/width shift of up to
    10%, zero filled.  Shape and label are never touched."""
    c, h, w = image.shape
    out = image
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    max_dy = int(h * max_shift_frac)
    max_dx = int(w * max_shift_frac)
    dy = int(rng.integers(-max_dy, max_dy + 1))
    dx = int(rng.integers(-max_dx, max_dx + 1))
    if dy or dx:
        shifted = np.zeros_like(out)
        src_y = slice(max(0, -dy), min(h, h - dy))
        src_x = slice(max(0, -dx), min(w, w - dx))
        dst_y = slice(max(0, dy), min(h, h + dy))
        dst_x = slice(max(0, dx), min(w, w + dx))
        shifted[:, dst_y, dst_x] = out[:, src_y, src_x]
        out = shifted
    return np.ascontiguousarray(out)


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(img, rng) for img in images])


# ---------------------------------------------------------------------------
# synthetic classification data
# ---------------------------------------------------------------------------


def synth_dataset(n: int, classes: int, seed: int, image_shape=(3, 32, 32),
                  noise: float = 0.6) -> LabeledImages:
    """Deterministic Gaussian-blob images, one blob pattern per class.

    Class patterns (blob position and per-channel amplitude signature)
    come from a fixed generator, so splits drawn with different seeds
    describe the same classification task; `seed` only drives the
    sampling and `noise` controls how hard the problem is.
    """
    c, h, w = image_shape
    if n == 0:
        return LabeledImages(np.zeros((0, c, h, w), dtype=np.float32),
                             np.zeros(0, dtype=np.int64))
    pattern_rng = np.random.default_rng(901_234)
    centers = pattern_rng.uniform(0.25, 0.75, size=(classes, 2))
    amps = pattern_rng.uniform(0.4, 1.0, size=(classes, c)) * np.where(
        pattern_rng.random((classes, c)) < 0.5, -1.0, 1.0)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    images = np.zeros((n, c, h, w), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % classes
    rng.shuffle(labels)
    sigma = 0.15 * h
    for i in range(n):
        k = labels[i]
        cy, cx = centers[k, 0] * h, centers[k, 1] * w
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2)))
        img = amps[k][:, None, None] * blob[None, :, :]
        img = img + noise * rng.standard_normal((c, h, w))
        images[i] = img
    images = (images - images.min()) / max(images.max() - images.min(), 1e-9)
    return LabeledImages(images.astype(np.float32), labels)


# ---------------------------------------------------------------------------
# event streams
# ---------------------------------------------------------------------------


def write_events(path: str, events: list[EventRecord], width: int, height: int) -> None:
    with open(path, "wb") as fh:
        fh.write(EVENT_HEADER.pack(EVENT_MAGIC, width, height, len(events)))
        for ev in events:
            fh.write(EVENT_RECORD.pack(ev.t, ev.x, ev.y, ev.polarity))


def read_events(path: str) -> tuple[list[EventRecord], int, int]:
    with open(path, "rb") as fh:
        head = fh.read(EVENT_HEADER.size)
        if len(head) < EVENT_HEADER.size:
            raise DataFormatError(f"{path}: header truncated at byte {len(head)}")
        magic, width, height, count = EVENT_HEADER.unpack(head)
        if magic != EVENT_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        body = fh.read()
    if len(body) != count * EVENT_RECORD.size:
        raise DataFormatError(
            f"{path}: expected {count} records ({count * EVENT_RECORD.size} bytes), "
            f"got {len(body)} bytes")
    events = [EventRecord(*EVENT_RECORD.unpack_from(body, i * EVENT_RECORD.size))
              for i in range(count)]
    _validate_stream(events, width, height, path)
    return events, width, height


def _validate_stream(events, width, height, origin="stream"):
    last_t = -1
    for i, ev in enumerate(events):
        if ev.x >= width or ev.y >= height:
            raise DataFormatError(f"{origin}: event {i} at ({ev.x},{ev.y}) outside "
                                  f"{width}x{height}")
        if ev.polarity not in (0, 1):
            raise DataFormatError(f"{origin}: event {i} polarity {ev.polarity} not in {{0,1}}")
        if ev.t < last_t:
            raise DataFormatError(f"{origin}: event {i} timestamp {ev.t} out of order")
        last_t = ev.t


def events_to_frames(events: list[EventRecord], steps: int, height: int, width: int,
                     mode: str = "count") -> FrameSequence:
    """Accumulate an event stream into `steps` per-polarity count frames.

    `count` mode slices the stream into contiguous runs of near-equal
    event count (earlier slices take the remainder), so every frame
    carries the same amount of signal; `time` mode slices the recording
    duration evenly instead.  Total counts are conserved exactly: each
    event lands in exactly one frame.
    """
    if steps < 1:
        raise ValueError(f"events_to_frames: steps must be >= 1, got {steps}")
    if mode not in ("count", "time"):
        raise ValueError(f"events_to_frames: unknown mode {mode!r}")
    _validate_stream(events, width, height)
    frames = np.zeros((steps, 2, height, width), dtype=np.float32)
    n = len(events)
    if n == 0:
        return FrameSequence(frames=frames)

    if mode == "count":
        base, rem = divmod(n, steps)
        bounds = [0]
        for s in range(steps):
            bounds.append(bounds[-1] + base + (1 if s < rem else 0))
    else:
        t0, t1 = events[0].t, events[-1].t
        span = max(t1 - t0, 1)
        bounds = [0]
        ts = np.array([ev.t for ev in events], dtype=np.int64)
        for s in range(1, steps):
            cut = t0 + span * s / steps
            bounds.append(int(np.searchsorted(ts, cut, side="left")))
        bounds.append(n)

    for s in range(steps):
        for ev in events[bounds[s]:bounds[s + 1]]:
            frames[s, ev.polarity, ev.y, ev.x] += 1.0
    return FrameSequence(frames=frames)
