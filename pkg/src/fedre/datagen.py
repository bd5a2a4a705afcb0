"""Synthetic tampered-document images with privacy-sensitive regions.

Each sample is a grayscale "document" whose background layout depends on
its format (contract, invoice, page, receipt). A rectangular patch is
brightened to simulate tampering and recorded in the tamper mask; 1-4
rectangular privacy-sensitive regions are placed near format-specific
anchors, independently of the tamper patch, so the two may overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .errors import FormatError

FORMATS = ("contract", "invoice", "page", "receipt")
DATA_MAGIC = b"FEDRE-D1"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned region: origin row ``a``, origin col ``b``, ``w`` rows tall, ``h`` cols wide."""

    a: int
    b: int
    w: int
    h: int

    def within(self, height: int, width: int) -> bool:
        return (
            self.a >= 0 and self.b >= 0 and self.w >= 1 and self.h >= 1
            and self.a + self.w <= height and self.b + self.h <= width
        )

    def pixels(self, width: int) -> np.ndarray:
        rows = np.arange(self.a, self.a + self.w)
        cols = np.arange(self.b, self.b + self.h)
        return (rows[:, None] * width + cols[None, :]).ravel()

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(eq=False)
class Sample:
    image: np.ndarray
    tamper_mask: np.ndarray
    psi_regions: list = field(default_factory=list)
    format_id: int = 0

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.format_id == other.format_id
            and self.psi_regions == other.psi_regions
            and self.image.shape == other.image.shape
            and self.image.tobytes() == other.image.tobytes()
            and self.tamper_mask.shape == other.tamper_mask.shape
            and self.tamper_mask.tobytes() == other.tamper_mask.tobytes()
        )

    def region_union(self) -> np.ndarray:
        """Boolean (H, W) mask covering every privacy-sensitive region."""
        out = np.zeros(self.tamper_mask.shape, dtype=bool)
        for r in self.psi_regions:
            out[r.a:r.a + r.w, r.b:r.b + r.h] = True
        return out


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int = 200
    height: int = 16
    width: int = 16
    channels: int = 1
    tamper_min: int = 3
    tamper_max: int = 6
    psi_count_min: int = 1
    psi_count_max: int = 4
    psi_size_min: int = 2
    psi_size_max: int = 6
    texture_seed: int = 7
    noise: float = 0.05
    tamper_boost: float = 0.4

    def validate(self) -> None:
        side = min(self.height, self.width)
        checks = [
            (self.n_samples >= 1, "n_samples must be positive"),
            (self.height >= 1 and self.width >= 1, "image extents must be positive"),
            (self.channels >= 1, "channels must be positive"),
            (1 <= self.tamper_min <= self.tamper_max, "tamper size range must satisfy 1 <= min <= max"),
            (self.tamper_max <= side, "tamper patch larger than the image"),
            (0 <= self.psi_count_min <= self.psi_count_max, "psi count range must satisfy 0 <= min <= max"),
            (1 <= self.psi_size_min <= self.psi_size_max, "psi size range must satisfy 1 <= min <= max"),
            (self.psi_size_max <= side, "psi region larger than the image"),
            (self.noise >= 0, "noise amplitude must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


def _format_template(spec: DatasetSpec, fmt: int) -> np.ndarray:
    """Fixed background layout shared by every sample of one format."""
    rng = np.random.default_rng([spec.texture_seed, fmt])
    H, W = spec.height, spec.width
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]
    base = 0.3 + 0.05 * rng.standard_normal((H, W))
    if fmt == 0:  # contract: dense text lines
        base -= 0.12 * (rows % 3 == 1)
    elif fmt == 1:  # invoice: table grid
        base -= 0.12 * ((rows % 4 == 0) | (cols % 5 == 0))
    elif fmt == 2:  # page: paragraph blocks
        base -= 0.1 * (((rows // 4) % 2 == 0) & (cols > W // 8) & (cols < W - W // 8))
    else:  # receipt: narrow centre column
        base -= 0.12 * ((np.abs(cols - W / 2) < W / 4) & (rows % 2 == 0))
    return np.clip(base, 0.1, 0.5)


def _anchors(spec: DatasetSpec, fmt: int) -> list:
    rng = np.random.default_rng([spec.texture_seed, fmt, 1])
    out = []
    for _ in range(max(spec.psi_count_max, 1)):
        w = int(rng.integers(spec.psi_size_min, spec.psi_size_max + 1))
        h = int(rng.integers(spec.psi_size_min, spec.psi_size_max + 1))
        a = int(rng.integers(0, spec.height - w + 1))
        b = int(rng.integers(0, spec.width - h + 1))
        out.append(Rect(a, b, w, h))
    return out


def _jitter(rect: Rect, rng, spec: DatasetSpec) -> Rect:
    a = int(np.clip(rect.a + rng.integers(-1, 2), 0, spec.height - rect.w))
    b = int(np.clip(rect.b + rng.integers(-1, 2), 0, spec.width - rect.h))
    return Rect(a, b, rect.w, rect.h)


def generate(spec: DatasetSpec, seed: int) -> list[Sample]:
    """Deterministic corpus; format ids cycle 0..3 so classes stay balanced."""
    spec.validate()
    rng = np.random.default_rng(seed)
    templates = [_format_template(spec, f) for f in range(len(FORMATS))]
    anchors = [_anchors(spec, f) for f in range(len(FORMATS))]
    H, W, c = spec.height, spec.width, spec.channels
    samples = []
    for i in range(spec.n_samples):
        fmt = i % len(FORMATS)
        img = templates[fmt][None] + rng.uniform(-spec.noise, spec.noise, size=(c, H, W))
        th = int(rng.integers(spec.tamper_min, spec.tamper_max + 1))
        tw = int(rng.integers(spec.tamper_min, spec.tamper_max + 1))
        ta = int(rng.integers(0, H - th + 1))
        tb = int(rng.integers(0, W - tw + 1))
        mask = np.zeros((H, W))
        mask[ta:ta + th, tb:tb + tw] = 1.0
        img[:, ta:ta + th, tb:tb + tw] += spec.tamper_boost
        img = np.clip(img, 0.0, 1.0)

        count = int(rng.integers(spec.psi_count_min, spec.psi_count_max + 1))
        picks = rng.permutation(len(anchors[fmt]))[:count]
        regions = [_jitter(anchors[fmt][k], rng, spec) for k in sorted(picks)]
        samples.append(Sample(img, mask, regions, fmt))
    return samples


def split_public(samples: list, per_format: int, seed: int) -> tuple[list, list]:
    """Draw ``per_format`` samples of each format into a public set.

    Returns ``(private, public)``, both in original corpus order.
    """
    if per_format < 0:
        raise ValueError("per_format must be non-negative")
    rng = np.random.default_rng(seed)
    chosen = set()
    for fmt in range(len(FORMATS)):
        idx = [i for i, s in enumerate(samples) if s.format_id == fmt]
        if len(idx) < per_format:
            raise ValueError(
                f"format {fmt} ({FORMATS[fmt]}) has {len(idx)} samples, {per_format} requested"
            )
        if per_format:
            chosen.update(int(i) for i in rng.choice(idx, size=per_format, replace=False))
    private = [s for i, s in enumerate(samples) if i not in chosen]
    public = [s for i, s in enumerate(samples) if i in chosen]
    return private, public


# ---------------------------------------------------------------- file format
#
# header : magic "FEDRE-D1", u32 count, u32 channels, u32 height, u32 width
# record : u32 byte length of the rest, u8 format id, u32 region count,
#          4 x u32 per region (a, b, w, h), f64 image (c*H*W), u8 mask (H*W)


def _encode_record(s: Sample) -> bytes:
    body = [binio.u8(s.format_id), binio.u32(len(s.psi_regions))]
    for r in s.psi_regions:
        body += [binio.u32(v) for v in (r.a, r.b, r.w, r.h)]
    body.append(binio.f64s(s.image))
    body.append(s.tamper_mask.astype(np.uint8).tobytes())
    payload = b"".join(body)
    return binio.u32(len(payload)) + payload


def dataset_to_bytes(samples: list) -> bytes:
    if samples:
        c, H, W = samples[0].image.shape
    else:
        c, H, W = 1, 1, 1
    out = [DATA_MAGIC] + [binio.u32(v) for v in (len(samples), c, H, W)]
    for s in samples:
        if s.image.shape != (c, H, W):
            raise ValueError("all samples in a dataset must share one image shape")
        if not np.all((s.tamper_mask == 0) | (s.tamper_mask == 1)):
            raise ValueError("tamper mask must be binary")
        out.append(_encode_record(s))
    return b"".join(out)


def _read_header(r: binio.Reader):
    r.magic(DATA_MAGIC)
    return tuple(r.u32(what) for what in ("sample count", "channels", "height", "width"))


def _decode_record(r: binio.Reader, c, H, W, index) -> Sample:
    length = r.u32(f"record {index} length")
    start = r.pos
    fmt = r.u8(f"record {index} format id")
    if fmt >= len(FORMATS):
        raise FormatError(f"record {index}: format id {fmt} out of range", start)
    regions = []
    for k in range(r.u32(f"record {index} region count")):
        at = r.pos
        rect = Rect(*(r.u32(f"record {index} region {k}") for _ in range(4)))
        if not rect.within(H, W):
            raise FormatError(f"record {index}: region {rect} outside {H}x{W} image", at)
        regions.append(rect)
    image = r.f64s(c * H * W, f"record {index} image").reshape(c, H, W)
    at = r.pos
    mask = r.u8s(H * W, f"record {index} mask")
    if mask.max(initial=0) > 1:
        raise FormatError(f"record {index}: mask is not binary", at)
    if r.pos - start != length:
        raise FormatError(f"record {index}: declared length {length}, decoded {r.pos - start}", start)
    return Sample(image, mask.reshape(H, W).astype(np.float64), regions, fmt)


def dataset_from_bytes(data: bytes) -> list[Sample]:
    r = binio.Reader(data)
    n, c, H, W = _read_header(r)
    samples = [_decode_record(r, c, H, W, i) for i in range(n)]
    r.finish()
    return samples


def save_dataset(samples: list, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(samples))


def load_dataset(path) -> list[Sample]:
    return dataset_from_bytes(Path(path).read_bytes())


def iter_dataset(path):
    """Yield samples one record at a time without reading the whole file."""
    with open(path, "rb") as fh:
        head = fh.read(len(DATA_MAGIC) + 16)
        r = binio.Reader(head)
        n, c, H, W = _read_header(r)
        offset = len(head)
        for i in range(n):
            raw_len = fh.read(4)
            if len(raw_len) < 4:
                raise FormatError(f"truncated file while reading record {i} length", offset)
            length = int.from_bytes(raw_len, "little")
            body = fh.read(length)
            rec = binio.Reader(raw_len + body)
            try:
                yield _decode_record(rec, c, H, W, i)
            except FormatError as exc:
                raise FormatError(str(exc).rsplit(" (at byte", 1)[0], offset + exc.offset) from None
            offset += 4 + length
        if fh.read(1):
            raise FormatError("trailing bytes after last record", offset)


def to_arrays(samples: list) -> tuple[np.ndarray, np.ndarray]:
    """Stack images and tamper masks into batch arrays."""
    X = np.stack([s.image for s in samples])
    Y = np.stack([s.tamper_mask for s in samples])
    return X, Y
