"""Walk through the toy codec: transform, quantizer, rate, a small encode."""

import numpy as np

from tplcodec.codec_core import (
    CodecConfig, block_bits, code_block, dct16_forward, encode_gop, plan_gop, quantize,
)
from tplcodec.media_io import synth_sequence

# a flat block has all its energy in DC
flat = np.full((16, 16), 16.0)
print("DC of a flat 16 block:", dct16_forward(flat)[0, 0])

# round-to-nearest quantizer, ties away from zero
print("quantize 17/8 ->", quantize(17, 8), " quantize -12/8 ->", quantize(-12, 8))

# every coefficient costs at least one bit (se(0) = '1')
print("all-zero block bits:", block_bits(np.zeros((16, 16), int)))

seq = synth_sequence("noisy_shift", 64, 64, 17, dx=1, dy=1, noise=3, seed=0)
cur = seq[1].luma[:16, :16]
pred = seq[0].luma[:16, :16]
rd, _ = code_block(cur, pred, 12.0, (0, 0))
print(f"co-located block at q=12: {rd.rate} bits, SSE {rd.distortion}")

# pyramid order for one group of 16
cfg = CodecConfig(base_qstep=16)
for e in list(plan_gop(cfg, 0))[:5]:
    print(f"  display {e.display:2d} level {e.level} q {e.qstep:6.2f} refs {e.refs}")

for q in (8, 16, 32, 56):
    rep = encode_gop(seq, cfg.with_qstep(q))
    print(f"q={q:2d}: {rep.kbps:8.1f} kbps  {rep.psnr:6.2f} dB")
