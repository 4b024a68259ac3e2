"""Event-stream ingestion for SHD-style datasets and a synthetic delayed-pattern task.

Interchange format (``.snne``), all integers little-endian::

    header   magic b"SNNE" | version u32 | n_samples u32 | c_raw u32 | n_classes u32
    sample   label u16 | n_events u32 | n_events x (time_us u32, channel u16)

Events are kept as two parallel integer arrays (microsecond timestamps and
channel indices) rather than per-event objects.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RngStream

__all__ = [
    "Events",
    "EventDataset",
    "FrameDataset",
    "DatasetMeta",
    "SyntheticSpec",
    "SHD_SPLITS",
    "bin_channels",
    "to_frames",
    "write_interchange",
    "read_interchange",
    "read_shd_h5",
    "convert",
    "load_dataset",
    "gen_synthetic",
]

MAGIC = b"SNNE"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_SAMPLE = struct.Struct("<HI")
_EVENT = np.dtype([("t", "<u4"), ("c", "<u2")])

SHD_CHANNELS = 700
SHD_CLASSES = 20
SHD_SPLITS = {"train": 8156, "test": 2264}


@dataclass
class Events:
    times: np.ndarray     # int64 microseconds
    channels: np.ndarray  # int64

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.int64)
        if self.times.shape != self.channels.shape or self.times.ndim != 1:
            raise ValueError("times and channels must be 1-D arrays of equal length")
        if self.times.size and self.times.min() < 0:
            raise ValueError("event times must be non-negative")

    def __len__(self) -> int:
        return self.times.size


@dataclass
class EventDataset:
    samples: list[Events]
    labels: np.ndarray
    c_raw: int
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ValueError("one label per sample required")


@dataclass
class DatasetMeta:
    split: str | None
    n_samples: int
    c_raw: int
    c_binned: int
    n_classes: int
    window_us: int
    bin_factor: int


@dataclass
class FrameDataset:
    frames: np.ndarray  # [N, T, C]
    labels: np.ndarray  # [N]
    meta: DatasetMeta

    def __len__(self) -> int:
        return len(self.labels)


def bin_channels(events: Events, factor: int, c_raw: int = SHD_CHANNELS) -> Events:
    """Merge every ``factor`` consecutive channels into one."""
    if factor < 1 or c_raw % factor:
        raise ValueError(f"bin factor {factor} must divide the channel count {c_raw}")
    if len(events) and (events.channels.max() >= c_raw or events.channels.min() < 0):
        raise ValueError(f"channel index outside [0, {c_raw})")
    return Events(events.times.copy(), events.channels // factor)


def to_frames(events: Events, window_us: int = 10_000, t_max: int = 100,
              n_channels: int | None = None) -> np.ndarray:
    """Count events per (time window, channel) into a [t_max, C] array.

    Events beyond ``t_max * window_us`` are dropped; shorter samples are
    zero-padded.
    """
    if window_us <= 0:
        raise ValueError("window must be positive")
    if n_channels is None:
        n_channels = int(events.channels.max()) + 1 if len(events) else 0
    frames = np.zeros((t_max, n_channels))
    if len(events) == 0:
        return frames
    idx = events.times // window_us
    keep = idx < t_max
    flat = idx[keep] * n_channels + events.channels[keep]
    frames.reshape(-1)[:] = np.bincount(flat, minlength=t_max * n_channels)
    return frames


def write_interchange(path, data: EventDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(data.samples), data.c_raw, data.n_classes))
        for ev, label in zip(data.samples, data.labels):
            if not 0 <= label < min(data.n_classes, 1 << 16):
                raise ValueError(f"label {label} out of range")
            if len(ev) and (ev.times.max() >= 1 << 32 or ev.channels.max() >= data.c_raw):
                raise ValueError("event does not fit the interchange format")
            rec = np.empty(len(ev), dtype=_EVENT)
            rec["t"] = ev.times
            rec["c"] = ev.channels
            fh.write(_SAMPLE.pack(int(label), len(ev)))
            fh.write(rec.tobytes())


def read_interchange(path) -> EventDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, c_raw, n_classes = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    samples, labels = [], []
    for i in range(n):
        if off + _SAMPLE.size > len(raw):
            raise ValueError(f"{path}: truncated at sample {i}")
        label, n_ev = _SAMPLE.unpack_from(raw, off)
        off += _SAMPLE.size
        end = off + n_ev * _EVENT.itemsize
        if end > len(raw):
            raise ValueError(f"{path}: truncated events in sample {i}")
        rec = np.frombuffer(raw, dtype=_EVENT, count=n_ev, offset=off)
        off = end
        if label >= n_classes:
            raise ValueError(f"{path}: sample {i} has unknown class label {label}")
        if n_ev and rec["c"].max() >= c_raw:
            raise ValueError(f"{path}: sample {i} has channel >= {c_raw}")
        samples.append(Events(rec["t"].astype(np.int64), rec["c"].astype(np.int64)))
        labels.append(label)
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return EventDataset(samples, np.array(labels, dtype=np.int64), c_raw, n_classes)


def read_shd_h5(path, c_raw: int = SHD_CHANNELS, n_classes: int = SHD_CLASSES) -> EventDataset:
    """Read the published HDF5 layout (``spikes/times`` in seconds,
    ``spikes/units``, ``labels``)."""
    import h5py

    with h5py.File(path, "r") as f:
        times = f["spikes"]["times"]
        units = f["spikes"]["units"]
        labels = np.asarray(f["labels"], dtype=np.int64)
        samples = [
            Events(np.rint(np.asarray(t, dtype=np.float64) * 1e6).astype(np.int64), np.asarray(u))
            for t, u in zip(times, units)
        ]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"{path}: unknown class label")
    return EventDataset(samples, labels, c_raw, n_classes)


def convert(src, dst) -> EventDataset:
    data = read_shd_h5(src)
    write_interchange(dst, data)
    return data


def _read_any(path) -> EventDataset:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:4] == MAGIC:
        return read_interchange(path)
    if head == b"\x89HDF\r\n\x1a\n":
        return read_shd_h5(path)
    raise ValueError(f"{path}: unrecognised dataset format")


def load_dataset(path, split: str | None = None, bin_factor: int = 5, window_us: int = 10_000,
                 t_max: int = 100) -> FrameDataset:
    """Load, bin and frame a dataset file (interchange or HDF5).

    When ``split`` names an SHD split the sample count, channel count and
    number of classes are checked against the published dataset.
    """
    data = _read_any(path)
    if split is not None:
        if split not in SHD_SPLITS:
            raise ValueError(f"unknown split {split!r}")
        want = (SHD_SPLITS[split], SHD_CHANNELS, SHD_CLASSES)
        got = (len(data.samples), data.c_raw, data.n_classes)
        if got != want:
            raise ValueError(f"{path}: SHD {split} split should have (samples, channels, classes) {want}, got {got}")
    c_binned = data.c_raw // bin_factor
    frames = np.zeros((len(data.samples), t_max, c_binned))
    for i, ev in enumerate(data.samples):
        frames[i] = to_frames(bin_channels(ev, bin_factor, data.c_raw), window_us, t_max, c_binned)
    meta = DatasetMeta(split, len(data.samples), data.c_raw, c_binned, data.n_classes, window_us, bin_factor)
    return FrameDataset(frames, data.labels.copy(), meta)


@dataclass
class SyntheticSpec:
    """Delayed-pattern task: a marker spike on channel 0 at a random onset and
    a probe spike on ``probe_channel`` exactly ``lags[class]`` steps later."""

    n_classes: int = 2
    channels: int = 4
    seq_len: int = 40
    lags: tuple[int, ...] = (2, 6)
    noise_rate: float = 0.03
    n_samples: int = 256
    probe_channel: int = 1
    seed: int = 0

    def __post_init__(self):
        self.lags = tuple(int(x) for x in self.lags)
        if len(self.lags) != self.n_classes:
            raise ValueError("one lag per class required")
        if len(set(self.lags)) != len(self.lags):
            raise ValueError("lags must be distinct")
        if min(self.lags) < 1 or max(self.lags) >= self.seq_len:
            raise ValueError("lags must lie in [1, seq_len)")
        if not 0 <= self.probe_channel < self.channels:
            raise ValueError("probe channel out of range")
        if self.noise_rate < 0:
            raise ValueError("noise rate must be non-negative")


def gen_synthetic(spec: SyntheticSpec) -> FrameDataset:
    rng = RngStream(spec.seed)
    N, T, C = spec.n_samples, spec.seq_len, spec.channels
    labels = (np.arange(N) % spec.n_classes)[rng.permutation(N)]
    frames = np.zeros((N, T, C))
    if spec.noise_rate > 0:
        frames += rng.poisson(spec.noise_rate, (N, T, C))
    # onset range is shared by all classes so position carries no label information
    max_onset = T - 1 - max(spec.lags)
    onsets = rng.integers(0, max_onset + 1, N)
    lags = np.asarray(spec.lags)[labels]
    rows = np.arange(N)
    frames[rows, onsets, 0] += 1.0
    frames[rows, onsets + lags, spec.probe_channel] += 1.0
    meta = DatasetMeta("synthetic", N, C, C, spec.n_classes, 1, 1)
    return FrameDataset(frames, labels, meta)
