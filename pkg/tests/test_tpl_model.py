import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tplcodec.codec_core import CodecConfig, encode_frame, anchor_entry, plan_gop
from tplcodec.media_io import synth_sequence
from tplcodec.tpl_model import (
    Diagnostics,
    TplGrid,
    beta_frame,
    delta_d_propagate,
    delta_r_propagate,
    distribute_to_grid,
    dump_rows,
    DUMP_COLUMNS,
    motion_flow_pass,
    overlap_weights,
    run_tpl,
    synthesize_dependency,
)

mp.mp.dps = 60


def _oracle_delta_r(dr, d_src, d_rec, acc):
    # literal closed form in high precision
    rho = mp.mpf(1) if d_rec == 0 else min(mp.mpf(d_src) / d_rec, mp.mpf(1))
    p = mp.power(2, 2 * mp.mpf(acc))
    return mp.mpf(dr) + mp.log(p / (rho * p + 1 - rho), 2)


class TestDeltaD:
    @pytest.mark.parametrize("args, want", [((0, 40, 20), 0), ((10, 40, 20), 15),
                                            ((10, 40, 0), 10)])
    def test_examples(self, args, want):
        assert delta_d_propagate(*args) == pytest.approx(want, abs=1e-12)

    def test_zero_d_rec(self):
        assert delta_d_propagate(3.0, 0.0, 100.0) == 3.0

    def test_ratio_clamped(self):
        diag = Diagnostics()
        assert delta_d_propagate(50, 40, 20, diag) == 70
        assert diag.delta_d_exceeds_d_rec == 1

    @given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(0, 1e6))
    def test_monotone_in_acc(self, dd, d_rec, acc):
        a = delta_d_propagate(dd, d_rec, acc)
        b = delta_d_propagate(dd, d_rec, acc + 1.0)
        assert a >= dd and b >= a


class TestDeltaR:
    def test_examples(self):
        assert delta_r_propagate(2, 25, 50, 1) == pytest.approx(2 + np.log2(1.6), abs=1e-12)
        assert delta_r_propagate(2, 25, 50, 1) == pytest.approx(2.678071905, abs=1e-9)
        assert delta_r_propagate(3, 40, 40, 7) == 3
        assert delta_r_propagate(3, 10, 40, 0) == 3
        assert delta_r_propagate(3, 0, 0, 5) == 3

    def test_rho_clamped(self):
        diag = Diagnostics()
        assert delta_r_propagate(1.0, 60, 40, 5) == 1.0
        delta_r_propagate(1.0, 60, 40, 5, diag)
        assert diag.rho_above_one == 1

    @settings(max_examples=300)
    @given(st.floats(0, 1e3), st.floats(0, 1e4), st.floats(1e-3, 1e4), st.floats(0, 600))
    def test_matches_high_precision_oracle(self, dr, d_src, d_rec, acc):
        got = delta_r_propagate(dr, d_src, d_rec, acc)
        want = _oracle_delta_r(dr, d_src, d_rec, acc)
        assert abs(got - float(want)) <= 1e-9 * max(1.0, abs(float(want)))
        assert got >= dr

    def test_large_acc_no_overflow(self):
        # rho = 0 adds exactly 2 * DeltaR; tiny rho saturates near -log2(rho)
        assert delta_r_propagate(0, 0, 10, 5000) == 10000
        got = delta_r_propagate(0, 1e-3, 10, 5000)
        assert got == pytest.approx(float(-mp.log(mp.mpf(1e-3) / 10, 2)), rel=1e-12)


class TestGeometry:
    def test_aligned(self):
        assert overlap_weights(16, 0, 4, 4) == [(0, 1, 1.0)]

    def test_quarter_split(self):
        w = overlap_weights(8, 8, 4, 4)
        assert sorted(w) == [(0, 0, .25), (0, 1, .25), (1, 0, .25), (1, 1, .25)]

    def test_example_weights(self):
        # a 16x16 rectangle at (4, 10) covers 12x6, 4x6, 12x10 and 4x10 pixels
        w = dict(((gy, gx), v) for gy, gx, v in overlap_weights(4, 10, 4, 4))
        assert w[(0, 0)] == pytest.approx(72 / 256)
        assert w[(0, 1)] == pytest.approx(24 / 256)
        assert w[(1, 0)] == pytest.approx(120 / 256)
        assert w[(1, 1)] == pytest.approx(40 / 256)

    def test_partially_outside_renormalised(self):
        w = overlap_weights(-8, 0, 2, 2)
        assert w == [(0, 0, 1.0)]

    def test_fully_outside_dropped(self):
        g = TplGrid.zeros((2, 2))
        diag = Diagnostics()
        distribute_to_grid(g, 40, 0, 5.0, 1.0, diag)
        assert diag.dropped_outside_frame == 1
        assert not g.acc_delta_d.any()

    @given(st.integers(-20, 60), st.integers(-20, 60), st.floats(0, 1e6))
    def test_conservation(self, x, y, v):
        g = TplGrid.zeros((3, 3))
        distribute_to_grid(g, x, y, v, 2 * v)
        if overlap_weights(x, y, 3, 3):
            assert g.acc_delta_d.sum() == pytest.approx(v, rel=1e-12, abs=1e-9)
            assert g.acc_delta_r.sum() == pytest.approx(2 * v, rel=1e-12, abs=1e-9)


def _bank(seq, cfg):
    bank = {}
    _, bank[0] = encode_frame(seq[0], anchor_entry(cfg), bank, cfg)
    return bank


def _chain_oracle(n):
    # k-th from last frame inherits k copies of the per-block delta
    acc = [0.0] * n
    for i in range(n - 1, 0, -1):
        acc[i - 1] = 1.0 + 1.0 * acc[i]
    return acc


class TestFlowAndSynthesis:
    def test_lossless_anchor_static_nullity(self):
        seq = synth_sequence("static", 64, 64, 5)
        cfg = CodecConfig(32, gop_length=4, gop_mode="low_delay", anchor_qstep=0.01)
        plan = plan_gop(cfg, 0)
        flow, tpl = run_tpl(seq, plan, cfg, _bank(seq, cfg))
        for e in plan:
            for row in flow.stats[e.display]:
                for s in row:
                    assert s.d_src == s.d_rec
                    assert all(v == 0 for v in s.delta_d + s.delta_r)
            assert not tpl.grids[e.display].acc_delta_d.any()
            assert not tpl.grids[e.display].acc_delta_r.any()

    def test_static_chain_closed_form(self):
        seq = synth_sequence("static", 64, 64, 9)
        cfg = CodecConfig(32, gop_length=8, gop_mode="low_delay", anchor_qstep=4)
        plan = plan_gop(cfg, 0)
        flow, tpl = run_tpl(seq, plan, cfg, _bank(seq, cfg))
        want = _chain_oracle(8)
        for i, e in enumerate(plan):
            assert beta_frame(tpl.grids[e.display], flow.d_rec(e.display)) == \
                pytest.approx(want[i], abs=1e-9)

    def test_single_delta_definitions(self):
        seq = synth_sequence("noisy_shift", 64, 64, 5, dx=1, noise=4, seed=3)
        cfg = CodecConfig(24, gop_length=4)
        plan = plan_gop(cfg, 0)
        flow = motion_flow_pass(seq, plan, cfg, _bank(seq, cfg))
        seen = set()
        for e in plan:
            for row in flow.stats[e.display]:
                for s in row:
                    seen.add(s.mode)
                    if s.mode == "single":
                        assert s.delta_d[0] == max(0.0, s.d_rec - s.d_src)
                        assert s.delta_r[0] == max(0.0, s.r_rec - s.r_src)
                    elif s.mode == "compound":
                        assert s.delta_d == (max(0.0, s.d_rec - s.d_src_rec),
                                             max(0.0, s.d_rec - s.d_rec_src))
                    else:
                        assert s.delta_d == () and s.delta_r == ()
                    assert all(v >= 0 for v in s.delta_d + s.delta_r)
        assert "single" in seen

    def test_last_frame_zero_and_nonnegative(self):
        seq = synth_sequence("noisy_shift", 64, 64, 9, dx=1, dy=1, noise=4, seed=4)
        cfg = CodecConfig(20, gop_length=8)
        plan = plan_gop(cfg, 0)
        flow, tpl = run_tpl(seq, plan, cfg, _bank(seq, cfg))
        last = plan.entries[-1].display
        assert not tpl.grids[last].acc_delta_d.any()
        for g in tpl.grids.values():
            assert (g.acc_delta_d >= 0).all() and (g.acc_delta_r >= 0).all()

    def test_half_split_not_larger(self):
        seq = synth_sequence("noisy_shift", 64, 64, 5, dx=1, noise=3, seed=5)
        cfg = CodecConfig(20, gop_length=4)
        plan = plan_gop(cfg, 0)
        flow = motion_flow_pass(seq, plan, cfg, _bank(seq, cfg))
        full = synthesize_dependency(flow, "full")
        half = synthesize_dependency(flow, "half")
        for d in full.grids:
            assert half.grids[d].acc_delta_d.sum() <= full.grids[d].acc_delta_d.sum() + 1e-9
        with pytest.raises(ValueError):
            synthesize_dependency(flow, "thirds")

    def test_missing_anchor(self):
        seq = synth_sequence("static", 32, 32, 5)
        cfg = CodecConfig(16, gop_length=4)
        with pytest.raises(ValueError):
            motion_flow_pass(seq, plan_gop(cfg, 0), cfg, {})

    def test_deterministic_and_dump(self):
        seq = synth_sequence("noisy_shift", 48, 48, 5, dx=1, noise=4, seed=6)
        cfg = CodecConfig(16, gop_length=4)
        plan = plan_gop(cfg, 0)
        a = dump_rows(*run_tpl(seq, plan, cfg, _bank(seq, cfg)))
        b = dump_rows(*run_tpl(seq, plan, cfg, _bank(seq, cfg)))
        assert a == b
        assert len(a) == 4 * 9 and list(a[0]) == DUMP_COLUMNS


def test_beta_frame_zero_denominator():
    with pytest.raises(ValueError):
        beta_frame(TplGrid.zeros((1, 1)), np.zeros((1, 1)))
