import hashlib
import os

import pytest

from mempool_sim.cli import main
from mempool_sim.configfile import load_config
from mempool_sim.geometry import ConfigError

SMALL_INI = """
[geometry]
cores_per_tile = 2
tiles_per_group = 4
groups = 4
banks_per_tile = 4
bank_words = 16
seq_rows_per_bank = 4

[timing]
queue_depth = 2

[sweep]
warmup = 200
window = 400
loads = 0.05, 0.2
"""


@pytest.fixture()
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI)
    return str(path)


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_config_defaults_when_missing():
    fc = load_config(None)
    assert fc.geometry.cores_per_tile == 4
    assert fc.sweep.window == 20000
    assert fc.queue_depth == 2


def test_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[geometry]\nbanks = 4\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[power]\nwatts = 3\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_bad_value_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[timing]\nl2_latency = soon\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_sweep_network_runs_and_is_deterministic(small_ini, tmp_path):
    out1 = str(tmp_path / "a.csv")
    out2 = str(tmp_path / "b.csv")
    argv = ["sweep-network", "--config", small_ini, "--topology", "one",
            "--seed", "7"]
    assert main(argv + ["--out", out1]) == 0
    assert main(argv + ["--out", out2]) == 0
    assert sha(out1) == sha(out2)
    head = open(out1).readline()
    assert head.startswith("# mempool-sim v") and "sweep-network" in head


def test_jobs_do_not_change_output(small_ini, tmp_path):
    out1 = str(tmp_path / "j1.csv")
    out2 = str(tmp_path / "j2.csv")
    argv = ["sweep-network", "--config", small_ini, "--topology", "hybrid"]
    assert main(argv + ["--out", out1, "--jobs", "1"]) == 0
    assert main(argv + ["--out", out2, "--jobs", "2"]) == 0
    assert sha(out1) == sha(out2)


def test_throughput_tracks_offered_below_saturation(small_ini, tmp_path):
    out = str(tmp_path / "net.csv")
    assert main(["sweep-network", "--config", small_ini, "--topology",
                 "hybrid", "--loads", "0.02,0.05,0.1", "--out", out]) == 0
    rows = [line.split(",") for line in open(out).read().splitlines()[2:]]
    thr = [float(r[3]) for r in rows]
    offered = [float(r[1]) for r in rows]
    for t, o in zip(thr, offered):
        assert t <= o * 1.05 + 0.01
    assert thr == sorted(thr)  # monotone in load up to saturation


def test_sweep_scramble_runs(small_ini, tmp_path):
    out = str(tmp_path / "scr.csv")
    assert main(["sweep-scramble", "--config", small_ini,
                 "--p-locals", "0,1.0", "--loads", "0.2", "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert "sweep-scramble" in lines[0]
    assert len(lines) == 2 + 2


def test_dma_util_subcommand(tmp_path):
    out = str(tmp_path / "dma.csv")
    assert main(["dma-util", "--sizes", "1024,65536", "--backends", "4,16",
                 "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert lines[1] == "backends,bytes,cycles,utilization"
    assert len(lines) == 2 + 4


def test_kernel_subcommand(small_ini, tmp_path):
    out = str(tmp_path / "k.csv")
    assert main(["kernel", "--config", small_ini, "--preset", "axpy",
                 "--iterations", "10", "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert "kernel" in lines[0]
    row = dict(zip(lines[1].split(","), lines[2].split(",")))
    total = sum(int(row[k]) for k in (
        "compute_cycles", "control_cycles", "synchronization_cycles",
        "icache_stall_cycles", "lsu_stall_cycles", "raw_stall_cycles"))
    assert total == int(row["cycles"]) * int(row["cores"])


def test_icache_sim_subcommand(tmp_path):
    trace = tmp_path / "t.trace"
    lines = []
    for _ in range(3):
        for pc in range(0, 16 * 4, 4):
            lines.append(f"{pc} B 0" if pc == 60 else f"{pc}")
    trace.write_text("\n".join(lines) + "\n")
    out = str(tmp_path / "ic.csv")
    assert main(["icache-sim", "--trace", str(trace), "--out", out]) == 0
    body = open(out).read().splitlines()
    assert len(body) == 2 + 3  # all three variants by default
    assert main(["icache-sim", "--trace", str(trace), "--variant", "2way",
                 "--cores", "4", "--out", out]) == 0
    assert len(open(out).read().splitlines()) == 3


def test_double_buffer_subcommand(small_ini, tmp_path):
    out = str(tmp_path / "db.csv")
    assert main(["double-buffer", "--config", small_ini, "--preset", "axpy",
                 "--rounds", "3", "--iterations", "8", "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert len(lines) == 2 + 5  # load_in + 3 compute rounds + write_back
    assert lines[2].split(",")[1] == "load_in"
    assert lines[-1].split(",")[1] == "write_back"


def test_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[geometry]\nbanks_per_tile = 3\n")
    assert main(["sweep-network", "--config", str(bad),
                 "--out", str(tmp_path / "x.csv")]) == 2


def test_exit_code_io_error(tmp_path):
    assert main(["icache-sim", "--trace", str(tmp_path / "missing.trace"),
                 "--out", "-"]) == 3


def test_exit_code_bad_trace_content(tmp_path):
    trace = tmp_path / "bad.trace"
    trace.write_text("not-a-pc\n")
    assert main(["icache-sim", "--trace", str(trace), "--out", "-"]) == 2


def test_plot_renders_png(small_ini, tmp_path):
    out = str(tmp_path / "net.csv")
    assert main(["sweep-network", "--config", small_ini, "--loads", "0.05",
                 "--out", out, "--plot"]) == 0
    assert os.path.exists(out[:-4] + ".png")
    out2 = str(tmp_path / "dma.csv")
    assert main(["dma-util", "--sizes", "1024", "--backends", "4",
                 "--out", out2, "--plot"]) == 0
    assert os.path.exists(out2[:-4] + ".png")
