import subprocess
import sys

import pytest

from tplcodec import baseline_models, tpl_model
from tplcodec.cli import main
from tplcodec.media_io import read_csv, synth_sequence, write_y4m

SMALL = ["--width", "32", "--height", "32", "--search-range", "4"]


def test_encode_smoke_and_determinism(tmp_path, capsys):
    for sub in ("a", "b"):
        rc = main(["encode", "--synth", "static", "--frames", "17", "--qstep", "16",
                   "--out-dir", str(tmp_path / sub), *SMALL])
        assert rc == 0
    a = (tmp_path / "a" / "encode_frames.csv").read_bytes()
    assert a == (tmp_path / "b" / "encode_frames.csv").read_bytes()
    assert len(a.decode().splitlines()) == 18
    assert "kbps=" in capsys.readouterr().out


def test_missing_qstep_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["encode", "--synth", "static", "--out-dir", str(tmp_path)])
    assert exc.value.code == 2


@pytest.mark.parametrize("argv", [
    ["encode", "--qstep", "8"],                                           # no input
    ["encode", "--synth", "static", "--input", "x.y4m", "--qstep", "8"],  # two inputs
    ["encode", "--synth", "static", "--qstep", "-1"],
    ["encode", "--synth", "static", "--qstep", "8", "--model", "x264"],
    ["accuracy", "--synth", "static", "--qsteps", "a,b"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


@pytest.mark.parametrize("cmd", ["encode", "tpl-dump", "observe", "accuracy", "bdrate"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "--out-dir" in capsys.readouterr().out


def test_runtime_errors_exit_1(tmp_path):
    assert main(["encode", "--input", str(tmp_path / "none.y4m"), "--qstep", "8",
                 "--out-dir", str(tmp_path)]) == 1
    bad = tmp_path / "bad.y4m"
    bad.write_bytes(b"YUV4MPEG2 W16 H16 C444\n")
    assert main(["encode", "--input", str(bad), "--qstep", "8",
                 "--out-dir", str(tmp_path)]) == 1
    # too short for one group
    assert main(["encode", "--synth", "static", "--frames", "5", "--qstep", "8",
                 "--out-dir", str(tmp_path)]) == 1


def test_encode_with_model_and_input(tmp_path):
    clip = tmp_path / "c.y4m"
    write_y4m(synth_sequence("noisy_shift", 32, 32, 6, dx=1, noise=3, seed=1), clip)
    rc = main(["encode", "--input", str(clip), "--qstep", "16", "--model", "tpl",
               "--gop-length", "4", "--out-dir", str(tmp_path), *SMALL])
    assert rc == 0
    rows = read_csv(tmp_path / "encode_frames.csv")
    assert [int(r["display"]) for r in rows] == [0, 4, 2, 1, 3]


def test_tpl_dump_lossless_static(tmp_path):
    rc = main(["tpl-dump", "--synth", "static", "--frames", "17", "--qstep", "32",
               "--gop-mode", "low_delay", "--anchor-qstep", "0.01",
               "--out-dir", str(tmp_path), *SMALL])
    assert rc == 0
    tpl_csv = (tmp_path / "tpl_dump.csv").read_text().splitlines()
    assert tpl_csv[0].split(",") == tpl_model.DUMP_COLUMNS
    assert len(tpl_csv) - 1 == 16 * 4
    for r in read_csv(tmp_path / "tpl_dump.csv"):
        assert float(r["delta_d"]) == 0 and float(r["delta_r"]) == 0
    mb_csv = (tmp_path / "mbtree_dump.csv").read_text().splitlines()
    assert mb_csv[0].split(",") == baseline_models.DUMP_COLUMNS
    assert len(mb_csv) - 1 == 16 * 4


def test_observe_and_accuracy(tmp_path):
    base = ["--synth", "noisy_shift", "--frames", "9", "--gop-length", "4",
            "--out-dir", str(tmp_path), *SMALL]
    assert main(["observe", "--qstep", "20", *base]) == 0
    assert len(read_csv(tmp_path / "observe.csv")) == 1
    assert main(["accuracy", *base]) == 0
    rows = read_csv(tmp_path / "accuracy.csv")
    assert len(rows) == 4
    assert [float(r["qstep"]) for r in rows] == [10, 20, 36, 56]


def test_bdrate(tmp_path):
    rc = main(["bdrate", "--synth", "noisy_shift", "--frames", "5", "--gop-length", "4",
               "--out-dir", str(tmp_path), *SMALL])
    assert rc == 0
    bd = read_csv(tmp_path / "bdrate.csv")
    assert [r["model"] for r in bd] == ["tpl", "mbtree-quant"]
    assert len(read_csv(tmp_path / "rd_curves.csv")) == 12


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "tplcodec", "encode", "--synth", "static",
                          "--frames", "5", "--gop-length", "4", "--qstep", "16",
                          "--out-dir", str(tmp_path), *SMALL],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
