import csv
import json

import pytest

from chiplet_cosim.cli import main
from conftest import CONFIGS

SMALL = {"count": 3, "mix": {"ResNet18": 1, "AlexNet": 1}, "inferences": 2, "seed": 1, "scale": 0.25}


@pytest.fixture
def workload(tmp_path):
    path = tmp_path / "w.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(tmp_path, workload, name, *extra):
    out = tmp_path / name
    code = main(["run", "--config", str(CONFIGS / "mesh10x10.json"), "--workload", str(workload),
                 "--out", str(out), *extra])
    return code, out


def test_run_writes_outputs(tmp_path, workload):
    code, out = run(tmp_path, workload, "a", "--emit", "report,flows,power,thermal,debug-trace")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["meta"]["seed"] == 1
    assert len(report["models"]) == 3
    with open(out / "flows.csv") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    header = next(csv.reader(rows[:1]))
    assert header[:9] == ["flow_id", "model", "layer", "inference", "src", "dst", "bytes", "inject_ns",
                          "complete_ns"]
    assert len(rows) - 1 == report["flow_count"]
    for name in ("power.csv", "events.csv", "thermal.csv", "heatmap_steady.csv", "runtime.json"):
        assert (out / name).exists(), name


def test_reruns_are_byte_identical(tmp_path, workload):
    outs = [run(tmp_path, workload, name, "--emit", "report,flows,power")[1] for name in ("a", "b")]
    for name in ("report.json", "flows.csv", "power.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    other = run(tmp_path, workload, "c", "--seed", "2")[1]
    assert (other / "report.json").read_bytes() != (outs[0] / "report.json").read_bytes()


def test_baseline_modes(tmp_path, workload):
    for mode in ("comm-only", "decoupled"):
        code, out = run(tmp_path, workload, mode, "--mode", mode, "--pipelined", "off")
        assert code == 0
        assert json.loads((out / "report.json").read_text())["meta"]["mode"] == mode


def test_config_errors_exit_2(tmp_path, workload, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.json"), "--workload", str(workload),
                 "--out", str(tmp_path / "x")])
    assert code == 2
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"mesh": "2x2", "timing": {"router_latency": -1}}')
    assert main(["run", "--config", str(bad), "--workload", str(workload), "--out", str(tmp_path / "y")]) == 2
    assert run(tmp_path, workload, "z", "--emit", "pictures")[0] == 2
    assert run(tmp_path, workload, "ws", "--weight-stationary")[0] == 2


def test_unmappable_model_exit_3(tmp_path):
    path = tmp_path / "vit.json"
    tiny = [{"kind": "fc", "in_h": 1, "in_w": 1, "in_c": 64, "k_h": 1, "k_w": 1, "out_c": 64}]
    path.write_text(json.dumps({"models": ["ViT-B", "tiny"], "inferences": 1, "library": {"tiny": tiny}}))
    code = main(["run", "--config", str(CONFIGS / "ring4.json"), "--workload", str(path),
                 "--out", str(tmp_path / "o")])
    assert code == 3
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert [m["name"] for m in report["skipped_models"]] == ["ViT-B"]
    assert [m["name"] for m in report["models"]] == ["tiny"]


def test_compare_single_point(tmp_path, workload, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", "--config", str(CONFIGS / "mesh10x10.json"), "--workload", str(workload),
                 "--out", str(out), "--sweep", "1"])
    assert code == 0
    with open(out / "compare.csv") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert rows and {r["model"] for r in rows} <= {"AlexNet", "ResNet18"}
    for r in rows:
        assert r["inferences"] == "1"
        assert float(r["comm_only_inference_ns"]) <= float(r["decoupled_inference_ns"])
    assert "cosim/decoupled" in capsys.readouterr().out
    assert main(["compare", "--config", str(CONFIGS / "mesh10x10.json"), "--workload", str(workload),
                 "--out", str(out), "--sweep", "1,x"]) == 2


def test_thermal_zero_trace_is_ambient(tmp_path):
    trace = tmp_path / "p.csv"
    with open(trace, "w", newline="") as fh:
        fh.write("# bin_width_us=1.0\n")
        w = csv.writer(fh)
        w.writerow(["bin_start_us", "chiplet_id", "watts"])
        for b in range(5):
            for c in range(4):
                w.writerow([float(b), c, 0.0])
    cfg = tmp_path / "quad.json"
    cfg.write_text('{"mesh": "2x2"}')
    out = tmp_path / "th"
    assert main(["thermal", "--config", str(cfg), "--trace", str(trace), "--out", str(out)]) == 0
    with open(out / "thermal.csv") as fh:
        temps = {float(r["kelvin"]) for r in csv.DictReader(line for line in fh if not line.startswith("#"))}
    assert temps == {300.0}
    # the trace must cover exactly the configured chiplets
    assert main(["thermal", "--config", str(CONFIGS / "mesh10x10.json"), "--trace", str(trace), "--out",
                 str(out)]) == 2


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.strip() == "0.1.0"
