import csv
import io
import json
import math

import numpy as np
import pytest

from percolab.cli import main
from percolab.treeio import deserialize

FULL = {"M": 2, "d": 2, "depth": 4, "model": {"type": "general", "pmf": [0, 0, 0, 0, 1],
                                               "placement": "uniform-subset"}, "seed": 1}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def pgm_pixels(path):
    data = path.read_bytes()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0] == "#schema=1" and lines[1].startswith("#manifest=")
    body = [ln for ln in lines if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_analyze_table(capsys):
    assert main(["analyze", "--M", "2", "--d", "1", "--p", "0.8", "--eps", "0.4"]) == 0
    out = capsys.readouterr().out
    q = float(next(ln for ln in out.splitlines() if ln.startswith("q="))[2:])
    assert q == pytest.approx(0.0625, abs=1e-12)
    s = float(next(ln for ln in out.splitlines() if ln.startswith("s="))[2:])
    assert s == pytest.approx(0.678072, abs=5e-7)
    rows = list(csv.DictReader(io.StringIO("\n".join(
        ln for ln in out.splitlines() if ln and not ln.startswith(("#", "q=", "s=", "M="))))))
    by = {r["theorem"]: r for r in rows}
    assert set(by) >= {"T1", "T2", "T3", "T4", "T5", "annular"}
    assert "c=0.125" in by["T1"]["constants"]
    for tag in ("T2", "T3"):
        r = by[tag]
        want = s - math.log(float(r["E_L"])) / (int(r["N"]) * math.log(2))
        assert float(r["delta"]) == pytest.approx(want, abs=1e-9)
    r = by["T5"]
    assert float(r["delta"]) == pytest.approx(math.log(float(r["E_L"])) / (int(r["N"]) * math.log(2)), abs=1e-9)


def test_analyze_files(tmp_path):
    out = tmp_path / "o"
    assert main(["analyze", "--M", "2", "--d", "1", "--p", "0.8", "--out", str(out), "--no-timestamp"]) == 0
    rows = read_csv(out / "bounds.csv")
    assert rows[0]["theorem"] == "T1"
    data = json.loads((out / "bounds.json").read_text())
    assert data["q"] == pytest.approx(0.0625)
    assert json.loads((out / "manifest.json").read_text())["command"] == "analyze"


def test_analyze_general_lists_inapplicable(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"M": 2, "d": 1, "depth": 3, "seed": 0,
                               "model": {"type": "general", "pmf": [0.1, 0.9, 0.0], "placement": "uniform-subset"}})
    assert main(["analyze", "--config", cfg]) == 3
    cfg = write_cfg(tmp_path, {"M": 2, "d": 1, "depth": 3, "seed": 0,
                               "model": {"type": "general", "pmf": [0.1, 0.3, 0.6], "placement": "uniform-subset"}})
    assert main(["analyze", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "# T4 not applicable" in out and "# annular not applicable" in out


def test_bad_config_file(capsys):
    assert main(["analyze", "--config", "/dev/null"]) == 2
    assert main(["analyze", "--config", "/nonexistent.json"]) == 2


def test_exit_codes(tmp_path, capsys):
    assert main(["analyze", "--M", "2", "--d", "1", "--p", "0.4"]) == 3
    assert main(["analyze", "--M", "2", "--d", "1", "--p", "0.8", "--eps", "0.6"]) == 2
    assert main(["mc", "--experiment", "nope", "--out", str(tmp_path)]) == 2
    assert main(["render", "--M", "2", "--d", "1", "--p", "0.8", "--depth", "3", "--out", str(tmp_path)]) == 2
    cap = dict(FULL, depth=6, node_cap=100)
    assert main(["sample", "--config", write_cfg(tmp_path, cap), "--out", str(tmp_path / "s")]) == 4
    assert main(["sample", "--M", "2", "--d", "1", "--p", "0.4", "--depth", "3",
                 "--out", str(tmp_path / "x")]) == 0
    err = capsys.readouterr().err
    assert "resource cap" in err


def test_sample_and_seed_precedence(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {"M": 2, "d": 2, "depth": 5, "model": {"type": "homogeneous", "p": 0.7},
                               "seed": 3, "condition": True})
    assert main(["sample", "--config", cfg, "--out", str(tmp_path / "a"), "--json"]) == 0
    t = deserialize((tmp_path / "a" / "tree.perc").read_bytes())
    assert t.config.seed == 3 and (tmp_path / "a" / "tree.json").exists()
    monkeypatch.setenv("PERCOLAB_SEED", "11")
    assert main(["sample", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert deserialize((tmp_path / "b" / "tree.perc").read_bytes()).config.seed == 11
    assert main(["sample", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "tree.perc").read_bytes() == (tmp_path / "a" / "tree.perc").read_bytes()


def test_render_full_and_pruned(tmp_path):
    cfg = write_cfg(tmp_path, FULL)
    assert main(["render", "--config", cfg, "--level", "3", "--mode", "retained", "--out", str(tmp_path / "r")]) == 0
    img = pgm_pixels(next((tmp_path / "r").glob("*.pgm")))
    assert img.shape[0] >= 512 and np.all(img == 0)
    assert main(["render", "--config", cfg, "--level", "1", "--mode", "pruned:NotAll", "--block", "1",
                 "--out", str(tmp_path / "p")]) == 0
    assert np.all(pgm_pixels(next((tmp_path / "p").glob("*.pgm"))) == 255)
    assert main(["render", "--config", cfg, "--mode", "sideways", "--out", str(tmp_path / "z")]) == 2


def test_render_is_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, {"M": 2, "d": 2, "depth": 6, "model": {"type": "homogeneous", "p": 0.75},
                               "seed": 5, "condition": True})
    for name in ("a", "b"):
        assert main(["render", "--config", cfg, "--level", "5", "--out", str(tmp_path / name)]) == 0
    a, b = (next((tmp_path / n).glob("*.pgm")).read_bytes() for n in "ab")
    assert a == b


def test_porosity_full_cube_center(tmp_path):
    cfg = write_cfg(tmp_path, dict(FULL, depth=6))
    pts = tmp_path / "pts.txt"
    pts.write_text("0.5 0.5\n0.3 0.6\n")
    out = tmp_path / "o"
    assert main(["porosity", "--config", cfg, "--points", f"file:{pts}", "--preset", "T2",
                 "--out", str(out), "--no-timestamp"]) == 0
    rows = read_csv(out / "porosity.csv")
    assert len(rows) >= 6 and all(float(r["por"]) == 0 for r in rows)
    summ = read_csv(out / "porosity_summary.csv")
    assert len(summ) == 2


def test_porosity_insufficient_depth(tmp_path):
    cfg = write_cfg(tmp_path, dict(FULL, depth=1))
    assert main(["porosity", "--config", cfg, "-g", "1", "--out", str(tmp_path / "o")]) == 2


def test_mc_outputs_and_worker_independence(tmp_path):
    outs = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        assert main(["mc", "--experiment", "EL-check", "--replicas", "25000", "--workers", str(w),
                     "--out", str(out), "--no-timestamp", "--seed", "9"]) == 0
        outs.append(out)
    for name in ("EL-check.csv", "EL-check_summary.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    summ = read_csv(outs[0] / "EL-check_summary.csv")
    assert float(summ[0]["target"]) == pytest.approx(7.84)
    assert summ[0]["pass"] in ("PASS", "FAIL")


def test_timestamp_line(tmp_path):
    out = tmp_path / "t"
    assert main(["analyze", "--M", "2", "--d", "1", "--p", "0.8", "--out", str(out)]) == 0
    assert (out / "bounds.csv").read_text().splitlines()[2].startswith("#generated=")
