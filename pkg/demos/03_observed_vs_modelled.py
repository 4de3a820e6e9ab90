"""Observed distortion propagation against the three model estimates.

beta_obs perturbs the long-term reference's qstep by 10% and measures how
much extra distortion the rest of the group picks up. Small clip so this
runs in well under a minute; the acceptance suite uses larger ones.
"""

import sys

from tplcodec.codec_core import CodecConfig
from tplcodec.eval_harness import accuracy_sweep
from tplcodec.media_io import read_y4m, synth_sequence

if len(sys.argv) > 1:
    seq = read_y4m(sys.argv[1])
else:
    seq = synth_sequence("noisy_shift", 64, 64, 33, noise=3, seed=1)

rows = accuracy_sweep(seq, CodecConfig(16))
print(" q    obs     tpl     mb    mbq")
for r in rows:
    print(f"{r['qstep']:3.0f} {r['beta_obs']:6.2f} {r['beta_tpl']:7.2f} "
          f"{r['beta_mb']:6.2f} {r['beta_mbq']:6.2f}")
