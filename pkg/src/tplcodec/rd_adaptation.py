"""Per-LCB Lagrangian multipliers driven by a temporal dependency model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .baseline_models import MbTreeResult, mbtree_pass
from .codec_core import LCB, CodecConfig, GopPlan
from .media_io import BLOCK, Frame, Sequence
from .tpl_model import Diagnostics, FlowResult, TplResult, motion_flow_pass, synthesize_dependency

LAMBDA_CLAMP = 8.0
MODELS = ("none", "tpl", "mbtree", "mbtree-quant")


@dataclass
class LambdaMap:
    display: int
    lambda_n: float
    alpha_fr: float
    alpha_m: np.ndarray
    lambda_m: np.ndarray


def _ratio(num: float, den: float, neutral: float | None, diag: Diagnostics | None) -> float:
    if den > 0:
        return num / den
    if neutral is None:
        raise ZeroDivisionError("propagation factor with zero denominator")
    if diag is not None:
        diag.zero_denominator_lcb += 1
    return neutral


def alpha_lcb_tpl(acc_delta_d, acc_delta_r, d_rec, lambda_tpl: float,
                  neutral: float | None = None, diag: Diagnostics | None = None) -> float:
    """sum(DeltaD + lambda_tpl * DeltaR) / sum(D_rec) over the LCB's blocks.

    An LCB with no reconstructed distortion gets ``neutral`` (normally the
    frame factor) so its multiplier is left alone.
    """
    num = float(np.sum(acc_delta_d)) + lambda_tpl * float(np.sum(acc_delta_r))
    return _ratio(num, float(np.sum(d_rec)), neutral, diag)


def alpha_frame_tpl(acc_delta_d, acc_delta_r, d_rec, lambda_tpl: float) -> float:
    den = float(np.sum(d_rec))
    if den <= 0:
        raise ValueError("frame has zero reconstructed distortion")
    return (float(np.sum(acc_delta_d)) + lambda_tpl * float(np.sum(acc_delta_r))) / den


def alpha_lcb_mbtree(c, s_intra, neutral: float | None = None,
                     diag: Diagnostics | None = None) -> float:
    return _ratio(float(np.sum(c)), float(np.sum(s_intra)), neutral, diag)


def alpha_frame_mbtree(c, s_intra) -> float:
    den = float(np.sum(s_intra))
    if den <= 0:
        raise ValueError("frame has zero intra SATD")
    return float(np.sum(c)) / den


def scale_lambda(lambda_n: float, alpha_fr: float, alpha_m: float) -> float:
    # ratio first so equal alphas give lambda_n bit-exactly
    lam = lambda_n * ((1.0 + alpha_fr) / (1.0 + alpha_m))
    return min(LAMBDA_CLAMP * lambda_n, max(lambda_n / LAMBDA_CLAMP, lam))


def _lcb_blocks(arr: np.ndarray, ly: int, lx: int) -> np.ndarray:
    k = LCB // BLOCK
    return arr[ly * k : (ly + 1) * k, lx * k : (lx + 1) * k]


def _lcb_shape(block_shape) -> tuple[int, int]:
    k = LCB // BLOCK
    return (-(-block_shape[0] // k), -(-block_shape[1] // k))


def _scaled_map(display, lambda_n, alpha_fr, per_lcb_alpha) -> LambdaMap:
    alpha_m = np.asarray(per_lcb_alpha, dtype=np.float64)
    lam = np.vectorize(lambda a: scale_lambda(lambda_n, alpha_fr, a), otypes=[float])(alpha_m)
    return LambdaMap(display, lambda_n, alpha_fr, alpha_m, lam)


def _neutral_map(display, lambda_n, shape) -> LambdaMap:
    return LambdaMap(display, lambda_n, 0.0, np.zeros(shape), np.full(shape, lambda_n))


def tpl_lambda_maps(flow: FlowResult, tpl: TplResult, config: CodecConfig,
                    diag: Diagnostics | None = None) -> dict[int, LambdaMap]:
    diag = diag if diag is not None else tpl.diagnostics
    lam_tpl = flow.lambda_tpl
    out = {}
    for e in flow.plan:
        g = tpl.grids[e.display]
        d_rec = flow.d_rec(e.display)
        lam_n = config.lam(e.qstep)
        shape = _lcb_shape(d_rec.shape)
        if np.sum(d_rec) <= 0:
            diag.degenerate_frames += 1
            out[e.display] = _neutral_map(e.display, lam_n, shape)
            continue
        a_fr = alpha_frame_tpl(g.acc_delta_d, g.acc_delta_r, d_rec, lam_tpl)
        alphas = [[alpha_lcb_tpl(_lcb_blocks(g.acc_delta_d, ly, lx),
                                 _lcb_blocks(g.acc_delta_r, ly, lx),
                                 _lcb_blocks(d_rec, ly, lx), lam_tpl, a_fr, diag)
                   for lx in range(shape[1])] for ly in range(shape[0])]
        out[e.display] = _scaled_map(e.display, lam_n, a_fr, alphas)
    return out


def mbtree_lambda_maps(mb: MbTreeResult, config: CodecConfig, quant: bool = True,
                       diag: Diagnostics | None = None) -> dict[int, LambdaMap]:
    diag = diag if diag is not None else Diagnostics()
    out = {}
    for e in mb.plan:
        st = mb.stats[e.display]
        c = st.c_quant if quant else st.c
        lam_n = config.lam(e.qstep)
        shape = _lcb_shape(c.shape)
        if np.sum(st.s_intra) <= 0:
            diag.degenerate_frames += 1
            out[e.display] = _neutral_map(e.display, lam_n, shape)
            continue
        a_fr = alpha_frame_mbtree(c, st.s_intra)
        alphas = [[alpha_lcb_mbtree(_lcb_blocks(c, ly, lx), _lcb_blocks(st.s_intra, ly, lx),
                                    a_fr, diag)
                   for lx in range(shape[1])] for ly in range(shape[0])]
        out[e.display] = _scaled_map(e.display, lam_n, a_fr, alphas)
    return out


def constant_alpha_maps(plan: GopPlan, config: CodecConfig, block_shape,
                        alpha: float) -> dict[int, LambdaMap]:
    """Every LCB and frame share one alpha; the result must equal baseline lambdas."""
    shape = _lcb_shape(block_shape)
    return {e.display: _scaled_map(e.display, config.lam(e.qstep), alpha,
                                   np.full(shape, alpha)) for e in plan}


def build_lambda_maps(model_output, config: CodecConfig, quant: bool = True
                      ) -> dict[int, LambdaMap]:
    """Dispatch on the model result: ``(FlowResult, TplResult)`` or ``MbTreeResult``."""
    if isinstance(model_output, MbTreeResult):
        return mbtree_lambda_maps(model_output, config, quant)
    flow, tpl = model_output
    return tpl_lambda_maps(flow, tpl, config)


def lambda_provider(model: str, config: CodecConfig, force_alpha: float | None = None,
                    sink: list | None = None):
    """Callable for ``encode_gop``: runs the model on each group before it is coded.

    ``sink`` collects the LambdaMap dicts (one per group) for inspection.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")

    def provide(plan: GopPlan, seq: Sequence, recon_bank: Mapping[int, Frame]):
        H, W = seq[0].luma.shape
        if force_alpha is not None:
            maps = constant_alpha_maps(plan, config, (H // BLOCK, W // BLOCK), force_alpha)
        elif model == "none":
            return {}
        elif model == "tpl":
            flow = motion_flow_pass(seq, plan, config, recon_bank)
            maps = tpl_lambda_maps(flow, synthesize_dependency(flow), config)
        elif model == "mbtree":
            maps = mbtree_lambda_maps(mbtree_pass(seq, plan, config), config, quant=False)
        else:
            flow = motion_flow_pass(seq, plan, config, recon_bank)
            maps = mbtree_lambda_maps(mbtree_pass(seq, plan, config, flow), config, quant=True)
        if sink is not None:
            sink.append(maps)
        return {d: m.lambda_m for d, m in maps.items()}

    return provide


DUMP_COLUMNS = ["frame", "lcb_x", "lcb_y", "alpha_m", "alpha_fr", "lambda_m"]


def dump_rows(maps: Mapping[int, LambdaMap]) -> list[dict]:
    out = []
    for d in sorted(maps):
        m = maps[d]
        for ly in range(m.alpha_m.shape[0]):
            for lx in range(m.alpha_m.shape[1]):
                out.append({"frame": d, "lcb_x": lx, "lcb_y": ly,
                            "alpha_m": float(m.alpha_m[ly, lx]), "alpha_fr": m.alpha_fr,
                            "lambda_m": float(m.lambda_m[ly, lx])})
    return out
