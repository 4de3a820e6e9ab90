"""A small block-based motion-compensated codec.

Everything runs on 16x16 luma blocks: orthonormal DCT, a plain
round-to-nearest quantizer, signed Exp-Golomb bit counting instead of an
entropy coder, full-search integer-pel motion estimation, intra DC
prediction and Lagrangian mode decision. The TPL first pass and the final
encode share these primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.linalg import hadamard

from .media_io import BLOCK, Frame, Sequence

LCB = 32
PSNR_CAP = 100.0

_DCT = dct(np.eye(BLOCK), norm="ortho", axis=0)
_H8 = hadamard(8).astype(np.int64)


# -- configuration and planning --------------------------------------------------

@dataclass(frozen=True)
class CodecConfig:
    base_qstep: float
    gop_length: int = 16
    gop_mode: str = "pyramid"
    search_range: int = 16
    level_qstep_scale: float = 2 ** -0.5
    lambda_coeff: float = 0.85
    # qstep of the sequence's first intra frame; None -> level-0 qstep
    anchor_qstep: Optional[float] = None

    def __post_init__(self):
        if not self.base_qstep > 0:
            raise ValueError("base_qstep must be positive")
        L = self.gop_length
        if L < 1 or L > 16 or L & (L - 1):
            raise ValueError("gop_length must be a power of two no larger than 16")
        if self.gop_mode not in ("low_delay", "pyramid"):
            raise ValueError(f"unknown gop_mode {self.gop_mode!r}")
        if self.search_range < 0:
            raise ValueError("search_range must be >= 0")
        if not 0 < self.level_qstep_scale <= 1:
            raise ValueError("level_qstep_scale must lie in (0, 1]")
        if self.anchor_qstep is not None and not self.anchor_qstep > 0:
            raise ValueError("anchor_qstep must be positive")

    @property
    def leaf_level(self) -> int:
        if self.gop_mode == "low_delay":
            return 0
        return int(math.log2(self.gop_length))

    def level_qstep(self, level: int) -> float:
        return self.base_qstep * self.level_qstep_scale ** (self.leaf_level - level)

    def lam(self, qstep: float) -> float:
        return self.lambda_coeff * qstep * qstep

    def with_qstep(self, qstep: float) -> "CodecConfig":
        return replace(self, base_qstep=qstep)


@dataclass(frozen=True)
class FramePlan:
    display: int
    coding_order: int
    level: int
    qstep: float
    refs: tuple[int, ...]
    is_leaf: bool


@dataclass(frozen=True)
class GopPlan:
    """Frames of one group in coding order. ``anchor`` is the already-coded
    frame just before the group in display order."""

    anchor: int
    entries: tuple[FramePlan, ...]
    leaf_qstep: float

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def entry(self, display: int) -> FramePlan:
        for e in self.entries:
            if e.display == display:
                return e
        raise KeyError(display)

    @property
    def key_frame(self) -> FramePlan:
        """The group's level-0 frame (coded first)."""
        return self.entries[0]

    def validate(self) -> None:
        coded = {self.anchor}
        for e in self.entries:
            if len(e.refs) > 2:
                raise ValueError(f"frame {e.display}: more than two references")
            for r in e.refs:
                if r not in coded:
                    raise ValueError(f"frame {e.display}: reference {r} not yet coded")
            if e.display in coded:
                raise ValueError(f"frame {e.display} coded twice")
            coded.add(e.display)


def _pyramid_order(lo: int, hi: int, level: int, out: list):
    if hi - lo < 2:
        return
    mid = (lo + hi) // 2
    out.append((mid, level, (lo, hi)))
    _pyramid_order(lo, mid, level + 1, out)
    _pyramid_order(mid, hi, level + 1, out)


def plan_gop(
    config: CodecConfig, anchor: int, qstep_overrides: Mapping[int, float] | None = None
) -> GopPlan:
    """Coding plan for display frames ``anchor+1 .. anchor+gop_length``.

    Pyramid: the last frame is coded first at level 0 from the anchor, then
    midpoints recursively (depth first), each from the two interval ends.
    Low delay: display order, one previous-frame reference, single layer.
    """
    L = config.gop_length
    overrides = qstep_overrides or {}
    if config.gop_mode == "low_delay":
        order = [(anchor + i, 0, (anchor + i - 1,)) for i in range(1, L + 1)]
    else:
        order = [(anchor + L, 0, (anchor,))]
        tmp: list = []
        _pyramid_order(0, L, 1, tmp)
        order += [(anchor + d, lev, (anchor + lo, anchor + hi)) for d, lev, (lo, hi) in tmp]
    # Preference order for exact cost ties: nearest reference first, then the
    # most recently coded one (the anchor counts as coded before the group).
    pos = {d: i for i, (d, _, _) in enumerate(order)}
    order = [(d, lev, sorted(refs, key=lambda r: (abs(d - r), -pos.get(r, -1))))
             for d, lev, refs in order]
    leaf = config.leaf_level
    entries = tuple(
        FramePlan(
            display=d,
            coding_order=i,
            level=lev,
            qstep=float(overrides.get(d, config.level_qstep(lev))),
            refs=tuple(refs),
            is_leaf=lev == leaf,
        )
        for i, (d, lev, refs) in enumerate(order)
    )
    plan = GopPlan(anchor, entries, config.level_qstep(leaf))
    plan.validate()
    return plan


# -- transform, quantizer, rate ---------------------------------------------------

def dct16_forward(block: np.ndarray) -> np.ndarray:
    b = np.asarray(block, dtype=np.float64)
    return _DCT @ b @ _DCT.T


def dct16_inverse(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    return _DCT.T @ c @ _DCT


def quantize(coeff, qstep: float):
    """Round to nearest, ties away from zero. Works on scalars and arrays."""
    if not qstep > 0:
        raise ValueError("qstep must be positive")
    c = np.asarray(coeff, dtype=np.float64)
    lev = np.sign(c) * np.floor(np.abs(c) / qstep + 0.5)
    lev = lev.astype(np.int64)
    return int(lev) if lev.ndim == 0 else lev


def dequantize(level, qstep: float):
    out = np.asarray(level, dtype=np.float64) * qstep
    return float(out) if out.ndim == 0 else out


def se_length(values) -> np.ndarray:
    """Signed Exp-Golomb code length: se(0)=1, se(+-1)=3, se(+-2)=5, ..."""
    v = np.asarray(values, dtype=np.int64)
    code_num = np.where(v > 0, 2 * v - 1, -2 * v)
    _, exp = np.frexp((code_num + 1).astype(np.float64))
    return 2 * (exp - 1) + 1


def block_bits(levels: np.ndarray, mv_diff=None) -> int:
    """Bits for a block of quantized levels plus optional motion vector(s).

    ``mv_diff`` is one (dx, dy) pair or a sequence of pairs (compound).
    """
    bits = int(se_length(levels).sum())
    if mv_diff is not None:
        mv = np.asarray(mv_diff, dtype=np.int64).reshape(-1)
        bits += int(se_length(mv).sum())
    return bits


def sse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sum(d * d))


def satd(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of absolute 8x8 Hadamard coefficients of the residual (unnormalized)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    h, w = a.shape
    if h % 8 or w % 8:
        raise ValueError("satd needs dimensions that are multiples of 8")
    r = a.astype(np.int64) - b.astype(np.int64)
    tiles = r.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    t = _H8 @ tiles @ _H8.T
    return float(np.abs(t).sum())


def psnr(mse: float) -> float:
    if mse < 0:
        raise ValueError("mse must be >= 0")
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / mse))


# -- prediction -----------------------------------------------------------------

def motion_search(
    cur: np.ndarray,
    ref: np.ndarray | Frame,
    x: int,
    y: int,
    center: tuple[int, int] = (0, 0),
    search_range: int = 16,
) -> tuple[tuple[int, int], int]:
    """Exhaustive integer-pel SAD search around ``center``.

    The predictor for mv (mx, my) is the reference block whose top-left is
    (x + mx, y + my). The window is clipped to the frame. Ties go to the
    smaller |mx| + |my|, then raster order (my first).
    """
    ref = ref.luma if isinstance(ref, Frame) else ref
    H, W = ref.shape
    n = cur.shape[0]
    x0 = max(0, x + center[0] - search_range)
    x1 = min(W - n, x + center[0] + search_range)
    y0 = max(0, y + center[1] - search_range)
    y1 = min(H - n, y + center[1] + search_range)
    if x0 > x1 or y0 > y1:
        # center points entirely outside; fall back to the co-located block
        x0 = x1 = min(max(x, 0), W - n)
        y0 = y1 = min(max(y, 0), H - n)
    region = ref[y0 : y1 + n, x0 : x1 + n].astype(np.int32)
    win = sliding_window_view(region, (n, n))
    sad = np.abs(win - cur.astype(np.int32)).sum(axis=(2, 3))
    my = np.arange(y0, y1 + 1)[:, None] - y
    mx = np.arange(x0, x1 + 1)[None, :] - x
    norm = np.abs(mx) + np.abs(my)
    # lexsort is stable, so equal (sad, norm) keep raster order
    idx = int(np.lexsort((norm.ravel(), sad.ravel()))[0])
    iy, ix = divmod(idx, sad.shape[1])
    return (int(mx[0, ix]), int(my[iy, 0])), int(sad[iy, ix])


def ref_block(ref: np.ndarray | Frame, x: int, y: int, mv: tuple[int, int]) -> np.ndarray:
    ref = ref.luma if isinstance(ref, Frame) else ref
    H, W = ref.shape
    px = min(max(x + mv[0], 0), W - BLOCK)
    py = min(max(y + mv[1], 0), H - BLOCK)
    return ref[py : py + BLOCK, px : px + BLOCK]


def predict_inter(refs, mvs, x: int, y: int) -> np.ndarray:
    """Single-reference copy or rounded average of two displaced blocks."""
    blocks = [ref_block(r, x, y, mv) for r, mv in zip(refs, mvs)]
    if len(blocks) == 1:
        return blocks[0].copy()
    if len(blocks) != 2:
        raise ValueError("inter prediction uses one or two references")
    s = blocks[0].astype(np.int32) + blocks[1].astype(np.int32)
    return ((s + 1) >> 1).astype(np.uint8)


def predict_intra_dc(recon: np.ndarray, x: int, y: int) -> np.ndarray:
    """Mean of the reconstructed row above and column left; 128 if neither."""
    parts = []
    if y > 0:
        parts.append(recon[y - 1, x : x + BLOCK])
    if x > 0:
        parts.append(recon[y : y + BLOCK, x - 1])
    if not parts:
        dc = 128
    else:
        s = int(sum(int(p.astype(np.int64).sum()) for p in parts))
        cnt = sum(p.size for p in parts)
        dc = (2 * s + cnt) // (2 * cnt)
    return np.full((BLOCK, BLOCK), dc, dtype=np.uint8)


@dataclass(frozen=True)
class RdCost:
    rate: float
    distortion: float

    def __post_init__(self):
        if self.rate < 0 or self.distortion < 0:
            raise ValueError("rate and distortion must be nonnegative")

    def cost(self, lam: float) -> float:
        return self.distortion + lam * self.rate


def code_block(
    cur: np.ndarray, pred: np.ndarray, qstep: float, mv_diff=None
) -> tuple[RdCost, np.ndarray]:
    """Transform-code ``cur - pred``; returns the (rate, SSE) pair and the
    8-bit reconstruction."""
    resid = cur.astype(np.float64) - pred.astype(np.float64)
    levels = quantize(dct16_forward(resid), qstep)
    bits = block_bits(levels, mv_diff)
    if levels.any():
        rec = pred.astype(np.float64) + dct16_inverse(dequantize(levels, qstep))
        rec = np.clip(np.rint(rec), 0, 255).astype(np.uint8)
    else:
        rec = pred.astype(np.uint8, copy=True)
    return RdCost(float(bits), sse(cur, rec)), rec


# -- frame and group encoding -----------------------------------------------------

@dataclass
class FrameReport:
    display: int
    coding_order: int
    level: int
    qstep: float
    bits: int
    sse: float
    psnr: float
    modes: list[str] = field(default_factory=list, repr=False)
    mvs: list[tuple] = field(default_factory=list, repr=False)


@dataclass
class EncodeReport:
    frames: list[FrameReport]              # coding order, anchor first
    groups: list[dict]                     # per group: first/last display, bits, sse
    recon: Sequence
    frame_rate: float = 30.0
    visible_pixels: int = 0

    def frame(self, display: int) -> FrameReport:
        for f in self.frames:
            if f.display == display:
                return f
        raise KeyError(display)

    @property
    def total_bits(self) -> int:
        return sum(f.bits for f in self.frames)

    @property
    def total_sse(self) -> float:
        return sum(f.sse for f in self.frames)

    @property
    def kbps(self) -> float:
        return self.total_bits * self.frame_rate / len(self.frames) / 1000.0

    @property
    def psnr(self) -> float:
        return psnr(self.total_sse / (len(self.frames) * self.visible_pixels))


def lcb_grid_shape(height: int, width: int) -> tuple[int, int]:
    return (-(-height // LCB), -(-width // LCB))


def encode_frame(
    cur: Frame,
    entry: FramePlan,
    refs: Mapping[int, Frame],
    config: CodecConfig,
    lambda_map: np.ndarray | None = None,
) -> tuple[FrameReport, Frame]:
    """RD mode decision per 16x16 block in raster order.

    Candidates: each single reference, the compound of both (reusing the
    single-reference vectors) and intra DC. The cheapest of
    ``D + lambda * R`` wins, with lambda taken from the block's 32x32 LCB.
    """
    missing = [r for r in entry.refs if r not in refs]
    if missing:
        raise KeyError(f"frame {entry.display}: references {missing} not reconstructed")
    H, W = cur.luma.shape
    q = entry.qstep
    if lambda_map is None:
        lambda_map = np.full(lcb_grid_shape(H, W), config.lam(q))
    src = cur.luma
    recon = np.zeros_like(src)
    ref_planes = [refs[r].luma for r in entry.refs]
    bits = 0
    modes: list[str] = []
    mvs: list[tuple] = []
    for y in range(0, H, BLOCK):
        for x in range(0, W, BLOCK):
            lam = float(lambda_map[y // LCB, x // LCB])
            blk = src[y : y + BLOCK, x : x + BLOCK]
            best = None  # (cost, mode, rd, rec, mv)
            single_mvs = []
            for i, rp in enumerate(ref_planes):
                mv, _ = motion_search(blk, rp, x, y, (0, 0), config.search_range)
                single_mvs.append(mv)
                rd, rec = code_block(blk, ref_block(rp, x, y, mv), q, mv)
                c = rd.cost(lam)
                if best is None or c < best[0]:
                    best = (c, f"single{i}", rd, rec, (mv,))
            if len(ref_planes) == 2:
                pred = predict_inter(ref_planes, single_mvs, x, y)
                rd, rec = code_block(blk, pred, q, single_mvs)
                c = rd.cost(lam)
                if c < best[0]:
                    best = (c, "compound", rd, rec, tuple(single_mvs))
            rd, rec = code_block(blk, predict_intra_dc(recon, x, y), q)
            c = rd.cost(lam)
            if best is None or c < best[0]:
                best = (c, "intra", rd, rec, ())
            _, mode, rd, rec, mv = best
            recon[y : y + BLOCK, x : x + BLOCK] = rec
            bits += int(rd.rate)
            modes.append(mode)
            mvs.append(mv)
    out = Frame(recon, cur.orig_width, cur.orig_height)
    recon.setflags(write=False)
    d = sse(cur.visible, out.visible)
    report = FrameReport(
        entry.display, entry.coding_order, entry.level, q, bits, d,
        psnr(d / (cur.orig_width * cur.orig_height)), modes, mvs,
    )
    return report, out


def anchor_entry(config: CodecConfig, display: int = 0, qstep: float | None = None) -> FramePlan:
    q = qstep if qstep is not None else (config.anchor_qstep or config.level_qstep(0))
    return FramePlan(display, -1, 0, float(q), (), config.leaf_level == 0)


LambdaMaps = Mapping[int, np.ndarray]
LambdaProvider = Callable[[GopPlan, Sequence, Mapping[int, Frame]], LambdaMaps]


def encode_group(
    seq: Sequence,
    plan: GopPlan,
    recon_bank: dict[int, Frame],
    config: CodecConfig,
    lambda_maps: LambdaMaps | LambdaProvider | None = None,
) -> list[FrameReport]:
    """Encode one group; reconstructions are added to ``recon_bank``."""
    if callable(lambda_maps):
        lambda_maps = lambda_maps(plan, seq, recon_bank)
    lambda_maps = lambda_maps or {}
    reports = []
    for e in plan:
        rep, rec = encode_frame(seq[e.display], e, recon_bank, config, lambda_maps.get(e.display))
        recon_bank[e.display] = rec
        reports.append(rep)
    return reports


def encode_gop(
    seq: Sequence,
    config: CodecConfig,
    lambda_maps: LambdaMaps | LambdaProvider | None = None,
    qstep_overrides: Mapping[int, float] | None = None,
) -> EncodeReport:
    """Encode an intra anchor followed by whole groups of ``gop_length`` frames.

    ``lambda_maps`` is either a fixed display-index -> LCB lambda array mapping
    or a callable ``(plan, seq, recon_bank) -> mapping`` invoked before each
    group, which lets a model see the true reconstruction of the group's
    anchor.
    """
    L = config.gop_length
    if (len(seq) - 1) % L:
        raise ValueError(f"sequence length {len(seq)} is not 1 + k*{L}")
    overrides = dict(qstep_overrides or {})
    bank: dict[int, Frame] = {}
    a = anchor_entry(config, 0, overrides.get(0))
    rep0, rec0 = encode_frame(seq[0], a, bank, config)
    bank[0] = rec0
    frames = [rep0]
    groups = []
    for g in range((len(seq) - 1) // L):
        plan = plan_gop(config, g * L, overrides)
        reps = encode_group(seq, plan, bank, config, lambda_maps)
        frames += reps
        groups.append({
            "first": g * L + 1, "last": (g + 1) * L,
            "bits": sum(r.bits for r in reps), "sse": sum(r.sse for r in reps),
        })
    f0 = seq[0]
    recon = Sequence([bank[i] for i in range(len(seq))], seq.frame_rate)
    return EncodeReport(frames, groups, recon, seq.frame_rate, f0.orig_width * f0.orig_height)
