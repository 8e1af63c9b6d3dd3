import csv
import json

import numpy as np
import pytest

from spectral_dielectric import cli
from spectral_dielectric import geometry as geo
from spectral_dielectric.irgnm import MeasurementSet, farfield_norm, read_history

DIELECTRIC = {"kappa_e": np.pi / 2, "kappa_i": np.pi, "mu_e": 1.0, "mu_i": 2.0}
AXES = [([1, 0, 0], [0, 0, 1]), ([-1, 0, 0], [0, 0, 1]), ([0, 1, 0], [1, 0, 0]),
        ([0, -1, 0], [1, 0, 0]), ([0, 0, 1], [0, 1, 0]), ([0, 0, -1], [0, 1, 0])]


def write(path, doc):
    path.write_text(json.dumps(doc, indent=1))
    return str(path)


def data_config(**extra):
    doc = {"version": 1, "truth": {"label": "sphere", "params": {"radius": 1.3}},
           "dielectric": DIELECTRIC,
           "incidents": [{"d": d, "p": p} for d, p in AXES],
           "noise_level": 0.0, "n_fwd": 8, "n_synth": 12, "n_far": 8, "seed": 0}
    doc.update(extra)
    return doc


def test_forward_writes_report(tmp_path):
    cfg = write(tmp_path / "f.json", {"version": 1, "shape": {"label": "sphere"},
                                      "dielectric": DIELECTRIC, "n_list": [3, 4], "n_far": 6})
    out = tmp_path / "r.csv"
    assert cli.main(["forward", "--config", cfg, "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["shape", "n", "err_ps", "re_pw", "im_pw", "assembly_seconds",
                             "solve_seconds"]
    assert [r["n"] for r in rows] == ["3", "4"]


def test_malformed_json_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1,\n "shape": }')
    assert cli.main(["forward", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("doc, field", [
    ({"version": 2}, "version"),
    ({"version": 1, "dielectric": DIELECTRIC, "n_list": [3]}, "shape"),
    ({"version": 1, "shape": {"label": "cube"}, "dielectric": DIELECTRIC, "n_list": [3]}, "shape"),
    ({"version": 1, "shape": {"label": "sphere"}, "dielectric": {"kappa_e": 1.0},
      "n_list": [3]}, "kappa_i"),
    ({"version": 1, "shape": {"label": "sphere"}, "dielectric": DIELECTRIC,
      "n_list": [0]}, "n_list"),
    ({"version": 1, "shape": {"label": "sphere"}, "dielectric": DIELECTRIC,
      "n_list": [3], "source": [0, 0]}, "source"),
])
def test_invalid_forward_configs(tmp_path, capsys, doc, field):
    cfg = write(tmp_path / "c.json", doc)
    assert cli.main(["forward", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert cli.main(["forward", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o")]) == 2


def test_make_data_determinism_and_noise(tmp_path):
    cfg = write(tmp_path / "d.json", data_config(noise_level=0.02, n_far=6))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["make-data", "--config", cfg, "--out", str(a), "--seed", "5"]) == 0
    assert cli.main(["make-data", "--config", cfg, "--out", str(b), "--seed", "5"]) == 0
    assert a.read_bytes() == b.read_bytes()
    ms = MeasurementSet.from_json(a)
    assert ms.seed == 5 and ms.delta > 0
    clean_cfg = write(tmp_path / "c.json", data_config(noise_level=0.0, n_far=6))
    c = tmp_path / "c_out.json"
    assert cli.main(["make-data", "--config", clean_cfg, "--out", str(c)]) == 0
    clean = MeasurementSet.from_json(c)
    noise = farfield_norm(ms.data - clean.data, ms.far_weights)
    assert noise == pytest.approx(ms.delta, rel=1e-12)


def test_inverse_crime_guard(tmp_path):
    cfg = write(tmp_path / "d.json", data_config(n_synth=8, n_far=6))
    out = str(tmp_path / "o.json")
    assert cli.main(["make-data", "--config", cfg, "--out", out]) == 2
    assert cli.main(["make-data", "--config", cfg, "--out", out, "--allow-inverse-crime"]) == 0


def test_reconstruct_sphere_and_resume(tmp_path):
    data_cfg = write(tmp_path / "d.json", data_config())
    data = tmp_path / "data.json"
    assert cli.main(["make-data", "--config", data_cfg, "--out", str(data)]) == 0
    rec_cfg = write(tmp_path / "r.json", {
        "version": 1, "initial": {"label": "sphere", "params": {"radius": 1.0}},
        "irgnm": {"n_fwd": 8, "n_inv": 0, "max_newton": 4}})
    out = tmp_path / "shape.json"
    hist = tmp_path / "h.jsonl"
    assert cli.main(["reconstruct", "--config", rec_cfg, "--data", str(data),
                     "--out", str(out), "--history", str(hist)]) == 0
    shape = geo.StarShape.from_json(out)
    records = read_history(hist)
    assert records[-1]["N"] == 4
    radius = shape.radius(np.array([[0.0, 0.0, 1.0]]))[0]
    assert abs(radius - 1.3) <= 1e-2
    assert cli.main(["reconstruct", "--config", rec_cfg, "--data", str(data),
                     "--out", str(out), "--resume", str(hist)]) == 0
    records = read_history(hist)
    assert [r["N"] for r in records] == list(range(9))


def test_reconstruct_bad_irgnm_options(tmp_path, capsys):
    data_cfg = write(tmp_path / "d.json", data_config(n_far=6))
    data = tmp_path / "data.json"
    assert cli.main(["make-data", "--config", data_cfg, "--out", str(data)]) == 0
    rec_cfg = write(tmp_path / "r.json", {
        "version": 1, "initial": {"label": "sphere"}, "irgnm": {"tau": 0.5}})
    assert cli.main(["reconstruct", "--config", rec_cfg, "--data", str(data),
                     "--out", str(tmp_path / "s.json")]) == 2
    assert "irgnm" in capsys.readouterr().err
