"""Measured distortion propagation versus model estimates, plus BD-rate."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Sequence as Seq

import numpy as np

from .baseline_models import beta_mb_frame, mbtree_pass
from .codec_core import (
    CodecConfig,
    anchor_entry,
    encode_frame,
    encode_gop,
    encode_group,
    plan_gop,
)
from .media_io import Frame, Sequence
from .rd_adaptation import lambda_provider
from .tpl_model import beta_frame, motion_flow_pass, synthesize_dependency

ACCURACY_QSTEPS = (10.0, 20.0, 36.0, 56.0)
BDRATE_QSTEPS = (8.0, 16.0, 32.0, 56.0)
ACCURACY_COLUMNS = ["qstep", "beta_obs", "beta_tpl", "beta_mb", "beta_mbq"]
RD_COLUMNS = ["model", "qstep", "kbps", "psnr"]
BD_COLUMNS = ["model", "bd_rate_percent", "runtime_ratio"]


@dataclass(frozen=True)
class BetaObservation:
    qstep: float
    frame: int
    D1: float
    D2: float
    d1: float
    d2: float
    beta_obs: float


def beta_from_distortions(D1: float, D2: float, d1: float, d2: float) -> float:
    """(D2 - D1) / (d2 - d1) - 1; the -1 removes the frame's own change."""
    if abs(d2 - d1) < 1e-9:
        raise ValueError("perturbation produced no distortion change")
    return (D2 - D1) / (d2 - d1) - 1.0


def _check_length(seq: Sequence, config: CodecConfig, group: int) -> None:
    need = (group + 1) * config.gop_length + 1
    if len(seq) < need:
        raise ValueError(f"need at least {need} frames, got {len(seq)}")


def encode_prefix(seq: Sequence, config: CodecConfig, group: int = 1) -> dict[int, Frame]:
    """Reconstructions of the anchor and every group before ``group``."""
    bank: dict[int, Frame] = {}
    _, bank[0] = encode_frame(seq[0], anchor_entry(config), bank, config)
    for g in range(group):
        encode_group(seq, plan_gop(config, g * config.gop_length), bank, config)
    return bank


def observe_beta(seq: Sequence, config: CodecConfig, perturb_ratio: float = 1.1,
                 group: int = 1, prefix: dict[int, Frame] | None = None) -> BetaObservation:
    """Perturb the qstep of the group's level-0 frame and measure the change
    in total group distortion against the change in that frame's distortion.

    Earlier groups do not depend on the perturbed frame, so their
    reconstruction (``prefix``) is shared by both runs.
    """
    _check_length(seq, config, group)
    if prefix is None:
        prefix = encode_prefix(seq, config, group)
    anchor = group * config.gop_length
    plan1 = plan_gop(config, anchor)
    key = plan1.key_frame
    plan2 = plan_gop(config, anchor, {key.display: key.qstep * perturb_ratio})
    r1 = encode_group(seq, plan1, dict(prefix), config)
    r2 = encode_group(seq, plan2, dict(prefix), config)
    D1 = sum(r.sse for r in r1)
    D2 = sum(r.sse for r in r2)
    d1 = next(r.sse for r in r1 if r.display == key.display)
    d2 = next(r.sse for r in r2 if r.display == key.display)
    return BetaObservation(config.base_qstep, key.display, D1, D2, d1, d2,
                           beta_from_distortions(D1, D2, d1, d2))


def estimate_betas(seq: Sequence, config: CodecConfig, group: int = 1,
                   prefix: dict[int, Frame] | None = None) -> dict[str, float]:
    """Frame-level propagation factors of the group's key frame for each model."""
    _check_length(seq, config, group)
    if prefix is None:
        prefix = encode_prefix(seq, config, group)
    plan = plan_gop(config, group * config.gop_length)
    key = plan.key_frame.display
    flow = motion_flow_pass(seq, plan, config, prefix)
    tpl = synthesize_dependency(flow)
    mb = mbtree_pass(seq, plan, config, flow)
    st = mb.stats[key]
    return {
        "frame": key,
        "beta_tpl": beta_frame(tpl.grids[key], flow.d_rec(key)),
        "beta_mb": beta_mb_frame(st.c, st.s_intra),
        "beta_mbq": beta_mb_frame(st.c_quant, st.s_intra),
    }


def accuracy_sweep(seq: Sequence, config: CodecConfig,
                   qsteps: Iterable[float] = ACCURACY_QSTEPS,
                   perturb_ratio: float = 1.1, group: int = 1) -> list[dict]:
    qsteps = list(qsteps)
    if len(qsteps) < 2:
        raise ValueError("accuracy sweep needs at least two qsteps")
    rows = []
    for q in qsteps:
        cfg = config.with_qstep(q)
        prefix = encode_prefix(seq, cfg, group)
        obs = observe_beta(seq, cfg, perturb_ratio, group, prefix)
        est = estimate_betas(seq, cfg, group, prefix)
        rows.append({"qstep": q, "beta_obs": obs.beta_obs, "beta_tpl": est["beta_tpl"],
                     "beta_mb": est["beta_mb"], "beta_mbq": est["beta_mbq"]})
    return rows


# -- BD-rate -------------------------------------------------------------------

@dataclass(frozen=True)
class RdPoint:
    bitrate: float   # kbit/s
    psnr: float


@dataclass(frozen=True)
class BdResult:
    bd_rate_percent: float
    runtime_ratio: float = float("nan")


def _curve(points: Seq[RdPoint]) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 4:
        raise ValueError("BD-rate needs at least 4 points per curve")
    pts = sorted(points, key=lambda p: p.bitrate)
    rate = np.array([p.bitrate for p in pts], dtype=np.float64)
    q = np.array([p.psnr for p in pts], dtype=np.float64)
    if np.any(rate <= 0):
        raise ValueError("rates must be positive")
    if np.any(np.diff(rate) <= 0) or np.any(np.diff(q) <= 0):
        raise ValueError("curve must be strictly increasing in both rate and PSNR")
    return np.log10(rate), q


def bd_rate(curve_a: Seq[RdPoint], curve_b: Seq[RdPoint]) -> BdResult:
    """Bjontegaard delta rate of ``curve_b`` against ``curve_a`` in percent.

    Cubic fit of log10(rate) over PSNR, integrated across the shared PSNR
    range. Negative means ``curve_b`` needs fewer bits for the same quality.
    """
    la, qa = _curve(curve_a)
    lb, qb = _curve(curve_b)
    lo, hi = max(qa.min(), qb.min()), min(qa.max(), qb.max())
    if lo >= hi:
        raise ValueError("PSNR ranges do not overlap")
    pa = np.polyint(np.polyfit(qa, la, 3))
    pb = np.polyint(np.polyfit(qb, lb, 3))
    ia = np.polyval(pa, hi) - np.polyval(pa, lo)
    ib = np.polyval(pb, hi) - np.polyval(pb, lo)
    avg = (ib - ia) / (hi - lo)
    return BdResult(100.0 * (10.0 ** avg - 1.0))


def _truncate(seq: Sequence, config: CodecConfig) -> Sequence:
    n = 1 + (len(seq) - 1) // config.gop_length * config.gop_length
    return seq[:n]


def compare_encoders(seq: Sequence, config: CodecConfig,
                     qsteps: Iterable[float] = BDRATE_QSTEPS,
                     models: Seq[str] = ("tpl", "mbtree-quant"),
                     force_alpha: float | None = None,
                     ) -> tuple[list[dict], dict[str, BdResult]]:
    """Baseline vs model-scaled lambda encodes at each qstep.

    Returns the RD rows (model, qstep, kbps, psnr) and one BdResult per model
    against the baseline, carrying the wall-clock runtime ratio.
    """
    qsteps = list(qsteps)
    if len(qsteps) < 4:
        raise ValueError("need at least 4 qsteps for BD-rate")
    seq = _truncate(seq, config)
    curves: dict[str, list[RdPoint]] = {m: [] for m in ("none", *models)}
    times = {m: 0.0 for m in curves}
    rows = []
    for q in qsteps:
        cfg = config.with_qstep(q)
        for m in curves:
            t0 = time.perf_counter()
            maps = None if m == "none" else lambda_provider(m, cfg, force_alpha)
            rep = encode_gop(seq, cfg, maps)
            times[m] += time.perf_counter() - t0
            curves[m].append(RdPoint(rep.kbps, rep.psnr))
            rows.append({"model": m, "qstep": q, "kbps": rep.kbps, "psnr": rep.psnr})
    results = {}
    for m in models:
        bd = bd_rate(curves["none"], curves[m]).bd_rate_percent
        results[m] = BdResult(bd, times[m] / times["none"])
    return rows, results
