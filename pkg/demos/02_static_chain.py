"""The propagation chain on a static clip.

The anchor is coded finely and every later frame coarsely, so inter
residuals quantize to zero and each frame copies the anchor's coding error.
Each frame then carries the error of every later frame in the chain, which
the TPL factor and the MB-tree accumulator both show as a linear ramp.
"""

from tplcodec.baseline_models import beta_mb_frame, mbtree_pass
from tplcodec.codec_core import CodecConfig, anchor_entry, encode_frame, plan_gop
from tplcodec.media_io import synth_sequence
from tplcodec.tpl_model import beta_frame, run_tpl

seq = synth_sequence("static", 64, 64, 17)
cfg = CodecConfig(32, gop_mode="low_delay", anchor_qstep=4)
plan = plan_gop(cfg, 0)

bank = {}
_, bank[0] = encode_frame(seq[0], anchor_entry(cfg), bank, cfg)
flow, tpl = run_tpl(seq, plan, cfg, bank)
mb = mbtree_pass(seq, plan, cfg)

print("frame  beta_TPL  beta_MB")
for e in plan:
    st = mb.stats[e.display]
    print(f"{e.display:5d}  {beta_frame(tpl.grids[e.display], flow.d_rec(e.display)):8.3f}"
          f"  {beta_mb_frame(st.c, st.s_intra):7.3f}")

# with a (near) lossless anchor there is no coding error to inherit
cfg0 = CodecConfig(32, gop_mode="low_delay", anchor_qstep=0.01)
bank = {}
_, bank[0] = encode_frame(seq[0], anchor_entry(cfg0), bank, cfg0)
flow0, tpl0 = run_tpl(seq, plan_gop(cfg0, 0), cfg0, bank)
print("lossless anchor, total DeltaD:", sum(g.acc_delta_d.sum() for g in tpl0.grids.values()))
