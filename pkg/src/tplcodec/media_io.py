"""Frame containers and Y4M input, synthetic clips, CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence as Seq

import numpy as np

BLOCK = 16


class Y4MError(ValueError):
    pass


def _pad_to_block(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph = -h % BLOCK
    pw = -w % BLOCK
    if ph == 0 and pw == 0:
        return plane
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge")


@dataclass(frozen=True)
class Frame:
    """One 8-bit luma plane, padded to a multiple of 16 on the right/bottom.

    ``orig_width``/``orig_height`` keep the visible size so PSNR is measured
    over real content only.
    """

    luma: np.ndarray
    orig_width: int
    orig_height: int

    @classmethod
    def from_array(cls, plane: np.ndarray) -> "Frame":
        plane = np.asarray(plane)
        if plane.ndim != 2:
            raise ValueError("luma plane must be 2-D")
        if plane.min(initial=0) < 0 or plane.max(initial=0) > 255:
            raise ValueError("samples must lie in [0, 255]")
        h, w = plane.shape
        padded = _pad_to_block(plane.astype(np.uint8))
        padded.setflags(write=False)
        return cls(padded, w, h)

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def visible(self) -> np.ndarray:
        return self.luma[: self.orig_height, : self.orig_width]


@dataclass
class Sequence:
    frames: list[Frame]
    frame_rate: float = 30.0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a sequence needs at least one frame")
        shape = self.frames[0].luma.shape
        if any(f.luma.shape != shape for f in self.frames):
            raise ValueError("all frames must share dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Sequence(self.frames[idx], self.frame_rate)
        return self.frames[idx]


# -- Y4M ---------------------------------------------------------------------

_CHROMA_FACTORS = {
    # bytes of chroma per luma sample
    "420": 0.5, "420jpeg": 0.5, "420paldv": 0.5, "420mpeg2": 0.5,
    "mono": 0.0, "400": 0.0,
}


def _parse_rate(token: str) -> float:
    num, _, den = token.partition(":")
    try:
        n, d = int(num), int(den or 1)
    except ValueError:
        raise Y4MError(f"malformed frame rate token 'F{token}'") from None
    if n <= 0 or d <= 0:
        raise Y4MError(f"malformed frame rate token 'F{token}'")
    return n / d


def parse_y4m(stream: BinaryIO | bytes) -> Sequence:
    """Read the luma planes of a 4:2:0 or 4:0:0 YUV4MPEG2 stream."""
    data = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise Y4MError("missing header line")
    tokens = data[:nl].decode("ascii", errors="replace").split(" ")
    if tokens[0] != "YUV4MPEG2":
        raise Y4MError(f"bad signature '{tokens[0]}'")

    width = height = None
    rate = 30.0
    chroma = "420"
    for tok in tokens[1:]:
        if not tok:
            continue
        key, val = tok[0], tok[1:]
        if key in "WH":
            if not val.isdigit() or int(val) <= 0:
                raise Y4MError(f"malformed dimension token '{tok}'")
            if key == "W":
                width = int(val)
            else:
                height = int(val)
        elif key == "F":
            rate = _parse_rate(val)
        elif key == "C":
            if val not in _CHROMA_FACTORS:
                raise Y4MError(f"unsupported chroma token '{tok}'")
            chroma = val
        elif key in "IAX":
            continue
        else:
            raise Y4MError(f"unknown header token '{tok}'")
    if width is None or height is None:
        raise Y4MError("header lacks W or H token")

    luma_size = width * height
    cw, ch = (width + 1) // 2, (height + 1) // 2
    chroma_size = 2 * cw * ch if _CHROMA_FACTORS[chroma] else 0

    frames = []
    pos = nl + 1
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0 or not data[pos:end].startswith(b"FRAME"):
            raise Y4MError(f"frame {len(frames)}: missing FRAME marker")
        pos = end + 1
        if pos + luma_size + chroma_size > len(data):
            raise Y4MError(f"frame {len(frames)}: truncated payload")
        plane = np.frombuffer(data, np.uint8, luma_size, pos).reshape(height, width)
        frames.append(Frame.from_array(plane))
        pos += luma_size + chroma_size
    if not frames:
        raise Y4MError("stream holds no frames")
    return Sequence(frames, rate)


def read_y4m(path: str | Path) -> Sequence:
    with open(path, "rb") as fh:
        return parse_y4m(fh)


def write_y4m(seq: Sequence, path: str | Path) -> None:
    """Write the visible luma region as a 4:0:0 Y4M file."""
    f0 = seq.frames[0]
    num, den = _rate_fraction(seq.frame_rate)
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{f0.orig_width} H{f0.orig_height} F{num}:{den} Cmono\n".encode())
        for f in seq.frames:
            fh.write(b"FRAME\n")
            fh.write(np.ascontiguousarray(f.visible).tobytes())


def _rate_fraction(rate: float) -> tuple[int, int]:
    from fractions import Fraction

    fr = Fraction(rate).limit_denominator(1001)
    return fr.numerator, fr.denominator


# -- synthetic clips -----------------------------------------------------------

def textured_base(width: int, height: int) -> np.ndarray:
    """Fixed texture: two incommensurate sinusoids plus low-amplitude fixed noise.

    The noise field uses its own constant seed, so the base never depends on
    the caller's seed. Periodic-only textures give ambiguous motion search.
    """
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    base = (
        128.0
        + 45.0 * np.sin(2 * np.pi * x / 23.7 + 0.4)
        + 35.0 * np.sin(2 * np.pi * (0.6 * x + y) / 17.3)
    )
    base += np.random.default_rng(20240601).uniform(-12.0, 12.0, size=base.shape)
    return np.clip(np.rint(base), 0, 255).astype(np.uint8)


def _shifted(base: np.ndarray, dx: int, dy: int) -> np.ndarray:
    # content moves by (dx, dy); edges clamp to the nearest source sample
    h, w = base.shape
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    return base[np.ix_(rows, cols)]


def synth_sequence(
    kind: str,
    width: int,
    height: int,
    length: int,
    dx: int = 0,
    dy: int = 0,
    noise: float = 0.0,
    seed: int = 0,
    frame_rate: float = 30.0,
) -> Sequence:
    """Deterministic test clip.

    ``static`` repeats the textured base, ``shift`` moves it by ``(dx, dy)``
    pixels per frame and ``noisy_shift`` adds seeded uniform noise of
    amplitude ``noise`` on top of the shift.
    """
    if width <= 0 or height <= 0 or length <= 0:
        raise ValueError("dimensions and length must be positive")
    if kind not in ("static", "shift", "noisy_shift"):
        raise ValueError(f"unknown synthetic kind {kind!r}")

    base = textured_base(width, height)
    rng = np.random.default_rng(seed)
    frames = []
    for n in range(length):
        if kind == "static":
            plane = base
        else:
            plane = _shifted(base, n * dx, n * dy)
        if kind == "noisy_shift" and noise > 0:
            plane = np.clip(
                np.rint(plane + rng.uniform(-noise, noise, size=plane.shape)), 0, 255
            )
        frames.append(Frame.from_array(plane))
    return Sequence(frames, frame_rate)


# -- CSV -----------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v) or math.isinf(v):
            return repr(v)
        return f"{v:.10g}"
    return str(value)


def write_csv(
    rows: Iterable[Mapping[str, object]],
    path: str | Path,
    header: Seq[str] | None = None,
) -> None:
    """Write records as UTF-8 CSV; floats keep 10 significant digits.

    ``header`` is required when ``rows`` may be empty.
    """
    rows = list(rows)
    if header is None:
        if not rows:
            raise ValueError("empty row list needs an explicit header")
        header = list(rows[0].keys())
    header = list(header)
    for i, r in enumerate(rows):
        if list(r.keys()) != header:
            raise ValueError(f"row {i} does not match the header schema")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
