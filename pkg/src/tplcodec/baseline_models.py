"""MB-tree and its quantization-aware variant (MB-tree-Quant).

Both run over source frames only: a forward pass collects intra/inter SATD
and motion, a backward pass propagates the share of information each block
passes on to its references.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec_core import (
    CodecConfig,
    GopPlan,
    motion_search,
    predict_intra_dc,
    predict_inter,
    ref_block,
    satd,
)
from .media_io import BLOCK, Sequence
from .tpl_model import FlowResult, overlap_weights


def mbtree_rho(s_intra: float, s_inter: float) -> float:
    if s_intra <= 0:
        return 0.0
    return min(1.0, max(0.0, (s_intra - s_inter) / s_intra))


def mbtree_propagate(c_cur: float, s_intra: float, rho: float) -> float:
    return rho * (s_intra + c_cur)


def mbtree_quant_propagate(c_cur: float, s_intra: float, rho: float,
                           d_rec: float, sigma2_src: float) -> float:
    # D / sigma^2 clamped to [0, 1]; no source error means nothing to scale
    f = 1.0 if sigma2_src <= 0 else min(1.0, max(0.0, d_rec / sigma2_src))
    return f * rho * (s_intra + c_cur)


@dataclass
class MbTreeStats:
    s_intra: np.ndarray
    s_inter: np.ndarray
    rho: np.ndarray
    c: np.ndarray
    c_quant: np.ndarray
    d_rec: np.ndarray
    sigma2_src: np.ndarray
    refs: list = field(default_factory=list, repr=False)   # per block, raster order
    mvs: list = field(default_factory=list, repr=False)


@dataclass
class MbTreeResult:
    plan: GopPlan
    stats: dict[int, MbTreeStats]


def mbtree_pass(seq: Sequence, plan: GopPlan, config: CodecConfig,
                flow: FlowResult | None = None) -> MbTreeResult:
    """Forward SATD analysis and backward C propagation for one group.

    ``flow`` (a finished TPL first pass of the same group) supplies D_rec and
    the source prediction error for the Quant variant; without it ``c_quant``
    equals ``c``. Compound blocks hand half of their amount to each side.
    """
    plan.validate()
    H, W = seq[0].luma.shape
    rows, cols = H // BLOCK, W // BLOCK
    stats: dict[int, MbTreeStats] = {}

    for e in plan:
        src = seq[e.display].luma
        refs = [seq[r].luma for r in e.refs]
        st = MbTreeStats(*(np.zeros((rows, cols)) for _ in range(7)))
        for by in range(rows):
            for bx in range(cols):
                x, y = bx * BLOCK, by * BLOCK
                blk = src[y : y + BLOCK, x : x + BLOCK]
                s_intra = satd(blk, predict_intra_dc(src, x, y))
                best = (np.inf, (), ())
                mvs = []
                for r, rp in zip(e.refs, refs):
                    mv, _ = motion_search(blk, rp, x, y, (0, 0), config.search_range)
                    mvs.append(mv)
                    s = satd(blk, ref_block(rp, x, y, mv))
                    if s < best[0]:
                        best = (s, (r,), (mv,))
                if len(refs) == 2:
                    s = satd(blk, predict_inter(refs, mvs, x, y))
                    if s < best[0]:
                        best = (s, tuple(e.refs), tuple(mvs))
                s_inter, brefs, bmvs = best
                st.s_intra[by, bx] = s_intra
                st.s_inter[by, bx] = s_inter if brefs else s_intra
                st.rho[by, bx] = mbtree_rho(s_intra, st.s_inter[by, bx])
                st.refs.append(brefs)
                st.mvs.append(bmvs)
        if flow is not None:
            for row in flow.stats[e.display]:
                for fs in row:
                    st.d_rec[fs.by, fs.bx] = fs.d_rec
                    st.sigma2_src[fs.by, fs.bx] = fs.sigma2_src
        stats[e.display] = st

    read: set[int] = set()
    for e in reversed(plan.entries):
        read.add(e.display)
        st = stats[e.display]
        for k, (brefs, bmvs) in enumerate(zip(st.refs, st.mvs)):
            by, bx = divmod(k, cols)
            rho = st.rho[by, bx]
            if not brefs or rho == 0:
                continue
            amount = mbtree_propagate(st.c[by, bx], st.s_intra[by, bx], rho)
            if flow is not None:
                amount_q = mbtree_quant_propagate(st.c_quant[by, bx], st.s_intra[by, bx], rho,
                                                  st.d_rec[by, bx], st.sigma2_src[by, bx])
            else:
                amount_q = mbtree_propagate(st.c_quant[by, bx], st.s_intra[by, bx], rho)
            share = 1.0 / len(brefs)
            for r, (mx, my) in zip(brefs, bmvs):
                if r not in stats:
                    continue
                assert r not in read, f"frame {r} written after it propagated"
                tgt = stats[r]
                for gy, gx, w in overlap_weights(x=bx * BLOCK + mx, y=by * BLOCK + my,
                                                 rows=rows, cols=cols):
                    tgt.c[gy, gx] += w * share * amount
                    tgt.c_quant[gy, gx] += w * share * amount_q
    return MbTreeResult(plan, stats)


def beta_mb_frame(c: np.ndarray, s_intra: np.ndarray) -> float:
    den = float(np.sum(s_intra))
    if den <= 0:
        raise ValueError("frame has zero intra SATD")
    return float(np.sum(c)) / den


DUMP_COLUMNS = ["frame", "block_x", "block_y", "S_intra", "S_inter", "rho", "C", "C_quant"]


def dump_rows(mb: MbTreeResult) -> list[dict]:
    out = []
    for e in mb.plan:
        st = mb.stats[e.display]
        rows, cols = st.c.shape
        for by in range(rows):
            for bx in range(cols):
                out.append({
                    "frame": e.display, "block_x": bx, "block_y": by,
                    "S_intra": float(st.s_intra[by, bx]), "S_inter": float(st.s_inter[by, bx]),
                    "rho": float(st.rho[by, bx]), "C": float(st.c[by, bx]),
                    "C_quant": float(st.c_quant[by, bx]),
                })
    return out
