"""Temporal dependency (TPL) model.

The first pass codes every 16x16 block of a group twice per reference,
once against the reconstructed reference and once against the untouched
source reference with the same motion vector. The gap between the two
(rate, distortion) pairs is the block's immediate sensitivity to the
reference's quantization error. The second pass walks the group in reverse
coding order and pushes accumulated extra distortion and rate back onto the
reference frames' on-grid blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .codec_core import (
    CodecConfig,
    GopPlan,
    code_block,
    motion_search,
    predict_intra_dc,
    predict_inter,
    ref_block,
    sse,
)
from .media_io import BLOCK, Frame, Sequence

_LN2 = math.log(2.0)


@dataclass
class Diagnostics:
    """Counts of model-assumption violations; never fatal."""

    delta_d_exceeds_d_rec: int = 0
    rho_above_one: int = 0
    dropped_outside_frame: int = 0
    zero_denominator_lcb: int = 0
    degenerate_frames: int = 0


@dataclass
class BlockFlowStats:
    bx: int
    by: int
    mode: str                      # "intra", "single" or "compound"
    refs: tuple[int, ...]          # display indices, empty for intra
    mvs: tuple[tuple[int, int], ...]
    r_src: float
    d_src: float
    r_rec: float
    d_rec: float
    # compound only: first ref source / second reconstructed, and the reverse
    r_src_rec: Optional[float] = None
    d_src_rec: Optional[float] = None
    r_rec_src: Optional[float] = None
    d_rec_src: Optional[float] = None
    delta_d: tuple[float, ...] = ()
    delta_r: tuple[float, ...] = ()
    sigma2_src: float = 0.0

    def d_src_side(self, i: int) -> float:
        """Distortion with only reference ``i`` switched to its source form."""
        if self.mode == "compound":
            return self.d_src_rec if i == 0 else self.d_rec_src
        return self.d_src


@dataclass
class FlowResult:
    plan: GopPlan
    stats: dict[int, list[list[BlockFlowStats]]]
    recon_bank: dict[int, Frame]
    src_bank: dict[int, Frame]
    tpl_qstep: float
    lambda_tpl: float
    grid_shape: tuple[int, int]

    def d_rec(self, display: int) -> np.ndarray:
        return np.array([[s.d_rec for s in row] for row in self.stats[display]])


@dataclass
class TplGrid:
    acc_delta_d: np.ndarray
    acc_delta_r: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "TplGrid":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class TplResult:
    grids: dict[int, TplGrid]
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


# -- motion flow construction ------------------------------------------------

def motion_flow_pass(
    seq: Sequence,
    plan: GopPlan,
    config: CodecConfig,
    recon_bank: Mapping[int, Frame],
    tpl_qstep: float | None = None,
) -> FlowResult:
    """First pass over one group in coding order at the leaf qstep.

    ``recon_bank`` must hold the reconstruction of the group's anchor (and of
    any other out-of-group reference). Motion is searched on the
    reconstructed reference and the same vector is reused on the source
    reference, so the two costs differ only by the reference's coding error.
    """
    plan.validate()
    if plan.anchor not in recon_bank:
        raise ValueError(f"anchor frame {plan.anchor} has no reconstruction")
    q = plan.leaf_qstep if tpl_qstep is None else tpl_qstep
    lam = config.lam(q)
    rec_bank = dict(recon_bank)
    src_bank = {plan.anchor: seq[plan.anchor]}
    H, W = seq[0].luma.shape
    rows, cols = H // BLOCK, W // BLOCK
    stats: dict[int, list[list[BlockFlowStats]]] = {}

    for e in plan:
        cur = seq[e.display]
        src = cur.luma
        rec_refs = [rec_bank[r].luma for r in e.refs]
        src_refs = [src_bank[r].luma for r in e.refs]
        recon = np.zeros_like(src)
        frame_stats = []
        for by in range(rows):
            row = []
            for bx in range(cols):
                x, y = bx * BLOCK, by * BLOCK
                blk = src[y : y + BLOCK, x : x + BLOCK]
                st, rec = _flow_block(blk, x, y, bx, by, e.refs, rec_refs, src_refs,
                                      recon, q, lam, config.search_range)
                recon[y : y + BLOCK, x : x + BLOCK] = rec
                row.append(st)
            frame_stats.append(row)
        stats[e.display] = frame_stats
        recon.setflags(write=False)
        rec_bank[e.display] = Frame(recon, cur.orig_width, cur.orig_height)
        src_bank[e.display] = cur
    return FlowResult(plan, stats, rec_bank, src_bank, q, lam, (rows, cols))


def _flow_block(blk, x, y, bx, by, ref_ids, rec_refs, src_refs, recon, q, lam, search_range):
    # candidate: (mode, refs, mvs, rd_rec, rec, rd_src, src_pred, mixed)
    cands = []
    mvs = []
    for i, (rr, sr) in enumerate(zip(rec_refs, src_refs)):
        mv, _ = motion_search(blk, rr, x, y, (0, 0), search_range)
        mvs.append(mv)
        rd_rec, rec = code_block(blk, ref_block(rr, x, y, mv), q, mv)
        src_pred = ref_block(sr, x, y, mv)
        rd_src, _ = code_block(blk, src_pred, q, mv)
        cands.append(("single", (ref_ids[i],), (mv,), rd_rec, rec, rd_src, src_pred, None))
    if len(rec_refs) == 2:
        rd_rec, rec = code_block(blk, predict_inter(rec_refs, mvs, x, y), q, mvs)
        src_pred = predict_inter(src_refs, mvs, x, y)
        rd_src, _ = code_block(blk, src_pred, q, mvs)
        rd_sr, _ = code_block(blk, predict_inter([src_refs[0], rec_refs[1]], mvs, x, y), q, mvs)
        rd_rs, _ = code_block(blk, predict_inter([rec_refs[0], src_refs[1]], mvs, x, y), q, mvs)
        cands.append(("compound", tuple(ref_ids), tuple(mvs), rd_rec, rec, rd_src, src_pred,
                      (rd_sr, rd_rs)))

    rd_intra, rec_intra = code_block(blk, predict_intra_dc(recon, x, y), q)
    intra = BlockFlowStats(bx, by, "intra", (), (), rd_intra.rate, rd_intra.distortion,
                           rd_intra.rate, rd_intra.distortion)
    if not cands:
        return intra, rec_intra

    best = min(cands, key=lambda c: c[3].cost(lam))  # first minimum on ties
    mode, refs, bmvs, rd_rec, rec, rd_src, src_pred, mixed = best
    sigma2 = sse(blk, src_pred)
    if rd_intra.cost(lam) < rd_src.cost(lam):
        intra.sigma2_src = sigma2
        return intra, rec_intra

    st = BlockFlowStats(bx, by, mode, refs, bmvs, rd_src.rate, rd_src.distortion,
                        rd_rec.rate, rd_rec.distortion, sigma2_src=sigma2)
    if mode == "single":
        st.delta_d = (max(0.0, rd_rec.distortion - rd_src.distortion),)
        st.delta_r = (max(0.0, rd_rec.rate - rd_src.rate),)
    else:
        rd_sr, rd_rs = mixed
        st.r_src_rec, st.d_src_rec = rd_sr.rate, rd_sr.distortion
        st.r_rec_src, st.d_rec_src = rd_rs.rate, rd_rs.distortion
        st.delta_d = (max(0.0, rd_rec.distortion - rd_sr.distortion),
                      max(0.0, rd_rec.distortion - rd_rs.distortion))
        st.delta_r = (max(0.0, rd_rec.rate - rd_sr.rate),
                      max(0.0, rd_rec.rate - rd_rs.rate))
    return st, rec


# -- dependency synthesis --------------------------------------------------

def delta_d_propagate(delta_d: float, d_rec: float, acc_delta_d: float,
                      diag: Diagnostics | None = None) -> float:
    """Extra group distortion handed to the reference: dD + (dD / D_rec) * DeltaD."""
    if d_rec <= 0:
        return delta_d
    ratio = delta_d / d_rec
    if ratio > 1.0:
        ratio = 1.0
        if diag is not None:
            diag.delta_d_exceeds_d_rec += 1
    return delta_d + ratio * acc_delta_d


def delta_r_propagate(delta_r: float, d_src: float, d_rec: float, acc_delta_r: float,
                      diag: Diagnostics | None = None) -> float:
    """Extra group rate handed to the reference.

    With rho = D_src / D_rec this is
    dR + log2(2^(2 DeltaR) / (rho 2^(2 DeltaR) + 1 - rho)), i.e.
    dR - log2(u) with u = rho + (1 - rho) 2^(-2 DeltaR), which is how it is
    evaluated here so large DeltaR cannot overflow.
    """
    if d_rec <= 0:
        rho = 1.0
    else:
        rho = d_src / d_rec
        if rho > 1.0:
            rho = 1.0
            if diag is not None:
                diag.rho_above_one += 1
    if rho == 1.0 or acc_delta_r == 0:
        return delta_r
    t = 2.0 * acc_delta_r
    if rho == 0.0:
        return delta_r + t
    a = (1.0 - rho) * -math.expm1(-t * _LN2)  # 1 - u
    if a < 0.5:
        term = -math.log1p(-a) / _LN2
    else:
        term = -math.log2(rho + (1.0 - rho) * 2.0 ** -t)
    return delta_r + max(term, 0.0)


def overlap_weights(x: int, y: int, rows: int, cols: int) -> list[tuple[int, int, float]]:
    """On-grid blocks covered by the 16x16 rectangle at pixel (x, y), weighted
    by overlap area over the total in-frame overlap."""
    x0, x1 = max(x, 0), min(x + BLOCK, cols * BLOCK)
    y0, y1 = max(y, 0), min(y + BLOCK, rows * BLOCK)
    if x0 >= x1 or y0 >= y1:
        return []
    parts = []
    for gy in range(y0 // BLOCK, (y1 - 1) // BLOCK + 1):
        oy = min(y1, (gy + 1) * BLOCK) - max(y0, gy * BLOCK)
        for gx in range(x0 // BLOCK, (x1 - 1) // BLOCK + 1):
            ox = min(x1, (gx + 1) * BLOCK) - max(x0, gx * BLOCK)
            parts.append((gy, gx, ox * oy))
    total = float(sum(a for _, _, a in parts))
    return [(gy, gx, a / total) for gy, gx, a in parts]


def distribute_to_grid(grid: TplGrid, x: int, y: int, value_d: float, value_r: float,
                       diag: Diagnostics | None = None) -> None:
    rows, cols = grid.acc_delta_d.shape
    weights = overlap_weights(x, y, rows, cols)
    if not weights:
        if diag is not None:
            diag.dropped_outside_frame += 1
        return
    for gy, gx, w in weights:
        grid.acc_delta_d[gy, gx] += w * value_d
        grid.acc_delta_r[gy, gx] += w * value_r


def synthesize_dependency(flow: FlowResult, compound_split: str = "full") -> TplResult:
    """Backward pass: accumulate DeltaD / DeltaR onto each referenced frame.

    Frames outside the group (the anchor) receive nothing. With
    ``compound_split="half"`` each side of a compound block gets half of its
    propagated amount instead of the full amount.
    """
    if compound_split not in ("full", "half"):
        raise ValueError(f"unknown compound_split {compound_split!r}")
    diag = Diagnostics()
    grids = {e.display: TplGrid.zeros(flow.grid_shape) for e in flow.plan}
    read: set[int] = set()
    for e in reversed(flow.plan.entries):
        read.add(e.display)
        g = grids[e.display]
        for row in flow.stats[e.display]:
            for s in row:
                if s.mode == "intra":
                    continue
                acc_d = g.acc_delta_d[s.by, s.bx]
                acc_r = g.acc_delta_r[s.by, s.bx]
                share = 0.5 if (s.mode == "compound" and compound_split == "half") else 1.0
                for i, ref in enumerate(s.refs):
                    if ref not in grids:
                        continue
                    # accumulators of ``ref`` must not have been consumed yet
                    assert ref not in read, f"frame {ref} written after it propagated"
                    vd = delta_d_propagate(s.delta_d[i], s.d_rec, acc_d, diag)
                    vr = delta_r_propagate(s.delta_r[i], s.d_src_side(i), s.d_rec, acc_r, diag)
                    mx, my = s.mvs[i]
                    distribute_to_grid(grids[ref], s.bx * BLOCK + mx, s.by * BLOCK + my,
                                       share * vd, share * vr, diag)
    return TplResult(grids, diag)


def beta_block(acc_delta_d: float, d_rec: float) -> float:
    if d_rec <= 0:
        return 0.0
    return acc_delta_d / d_rec


def beta_frame(grid: TplGrid, d_rec: np.ndarray) -> float:
    den = float(np.sum(d_rec))
    if den <= 0:
        raise ValueError("frame has zero reconstructed distortion")
    return float(np.sum(grid.acc_delta_d)) / den


def run_tpl(seq: Sequence, plan: GopPlan, config: CodecConfig,
            recon_bank: Mapping[int, Frame], compound_split: str = "full"
            ) -> tuple[FlowResult, TplResult]:
    flow = motion_flow_pass(seq, plan, config, recon_bank)
    return flow, synthesize_dependency(flow, compound_split)


DUMP_COLUMNS = ["frame", "block_x", "block_y", "mode", "ref0", "mv0x", "mv0y",
                "R_src", "D_src", "R_rec", "D_rec", "delta_d", "delta_r",
                "acc_delta_D", "acc_delta_R", "beta"]


def dump_rows(flow: FlowResult, tpl: TplResult) -> list[dict]:
    """Per-block records in coding order; delta columns sum over references."""
    out = []
    for e in flow.plan:
        g = tpl.grids[e.display]
        for row in flow.stats[e.display]:
            for s in row:
                ad = float(g.acc_delta_d[s.by, s.bx])
                out.append({
                    "frame": e.display, "block_x": s.bx, "block_y": s.by,
                    "mode": s.mode,
                    "ref0": s.refs[0] if s.refs else -1,
                    "mv0x": s.mvs[0][0] if s.mvs else 0,
                    "mv0y": s.mvs[0][1] if s.mvs else 0,
                    "R_src": s.r_src, "D_src": s.d_src, "R_rec": s.r_rec, "D_rec": s.d_rec,
                    "delta_d": float(sum(s.delta_d)), "delta_r": float(sum(s.delta_r)),
                    "acc_delta_D": ad, "acc_delta_R": float(g.acc_delta_r[s.by, s.bx]),
                    "beta": beta_block(ad, s.d_rec),
                })
    return out
