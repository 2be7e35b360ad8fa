import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lspline.cli import JobConfig, main


@pytest.fixture
def data(tmp_path):
    rng = np.random.default_rng(0)
    t = np.sort(rng.uniform(0, 1, 50))
    y = np.sin(6 * t) + rng.normal(0, 0.2, 50)
    path = tmp_path / "data.csv"
    with open(path, "w") as fh:
        fh.write("t,y,w\n")
        for a, b in zip(t, y):
            fh.write(f"{float(a)!r},{float(b)!r},1.0\n")
        fh.write("0.5,,1.0\n")
        fh.write("0.6,NA,1.0\n")
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_fit_shapes(data, tmp_path, capsys):
    curve, js, al = tmp_path / "c.csv", tmp_path / "r.json", tmp_path / "a.csv"
    rc = main(["fit", "--input", str(data), "--operator", "cubic", "--lambda", "0.001",
               "--out-curve", str(curve), "--out-json", str(js), "--out-alpha", str(al)])
    assert rc == 0
    assert "dropped 2 rows" in capsys.readouterr().err
    rows = _rows(curve)
    assert rows[0] == ["t", "mu_hat"] and len(rows) == 402
    out = json.loads(js.read_text())
    assert len(out["alpha"]) == 2 and out["m"] == 2 and out["path"] == "banded"
    assert {"alpha", "beta", "fitted", "lambda", "df", "objective"} <= set(out)
    assert _rows(al)[0] == ["alpha_index", "value"]


def test_fit_is_deterministic(data, tmp_path, monkeypatch):
    outs = []
    for i, threads in enumerate(("1", "4")):
        monkeypatch.setenv("LSPLINE_THREADS", threads)
        c, j = tmp_path / f"c{i}.csv", tmp_path / f"j{i}.json"
        assert main(["fit", "--input", str(data), "--lambda", "0.01", "--path", "dense",
                     "--out-curve", str(c), "--out-json", str(j)]) == 0
        outs.append((c.read_bytes(), j.read_bytes()))
    assert outs[0] == outs[1]


def test_duplicates_with_forced_banded(tmp_path, capsys):
    path = tmp_path / "dup.csv"
    path.write_text("t,y\n0.1,1\n0.2,2\n0.2,3\n0.4,1\n0.5,0\n")
    rc = main(["fit", "--input", str(path), "--path", "banded", "--lambda", "1"])
    err = capsys.readouterr().err.strip().splitlines()
    assert rc == 3
    assert err[-1].startswith("lspline-error code=3 kind=data")
    assert "[3, 4]" in err[-1]


def test_config_errors(data, capsys):
    assert main(["fit", "--input", str(data), "--operator", "bogus"]) == 2
    assert main(["fit", "--input", str(data), "--path", "sideways"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["lambda-scan", "--input", str(data)]) == 2
    errs = capsys.readouterr().err.strip().splitlines()
    assert all(e.startswith("lspline-error code=2 kind=config") for e in errs)


def test_data_errors(tmp_path, capsys):
    assert main(["fit", "--input", str(tmp_path / "missing.csv")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("t,y\n0.1,abc\n")
    assert main(["fit", "--input", str(bad)]) == 3
    assert main(["fit", "--input", str(bad), "--y-col", "nope"]) == 3


def test_solver_error(tmp_path, capsys):
    path = tmp_path / "d.csv"
    path.write_text("t,y\n0.3,1\n0.3,2\n0.3,3\n")
    rc = main(["fit", "--input", str(path), "--lambda", "1", "--path", "dense"])
    assert rc == 4
    assert "kind=solver" in capsys.readouterr().err


def test_lambda_grid_fit_writes_scores(data, tmp_path):
    js, sc = tmp_path / "r.json", tmp_path / "s.csv"
    rc = main(["fit", "--input", str(data), "--lambda-grid", "1e-6,1e-4,1e-2,1",
               "--out-json", str(js), "--out-scores", str(sc)])
    assert rc == 0
    rows = _rows(sc)
    assert rows[0] == ["lambda", "gcv", "df", "rss"] and len(rows) == 5
    out = json.loads(js.read_text())
    best = min(out["gcv"], key=lambda r: r["gcv"])["lambda"]
    assert out["lambda"] == best


def test_lambda_scan_stdout(data, capsys):
    assert main(["lambda-scan", "--input", str(data), "--lambda-grid", "0.001,0.1"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "lambda,gcv,df,rss" and len(out) == 3


def test_kernel_dump_brownian(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("t,y\n0.25,1\n0.5,2\n0.75,3\n0.0,0\n")
    kf, r0 = tmp_path / "k.csv", tmp_path / "r0.csv"
    rc = main(["kernel", "--input", str(path), "--operator", "linear", "--interval", "0,1",
               "--out-kernel", str(kf), "--out-r0", str(r0)])
    assert rc == 0
    rows = _rows(kf)
    pts = [float(x) for x in rows[0][1:]]
    K = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert pts == [0.0, 0.25, 0.5, 0.75]
    np.testing.assert_allclose(K[1:, 1:], [[.25, .25, .25], [.25, .5, .5], [.25, .5, .75]])
    assert np.all(K[0] == 0.0)
    R0 = np.array([[float(x) for x in r[1:]] for r in _rows(r0)[1:]])
    np.testing.assert_allclose(R0, 1.0)


def test_kernel_dump_cubic_matches_formula(data, tmp_path):
    kf = tmp_path / "k.csv"
    assert main(["kernel", "--input", str(data), "--interval", "0,1", "--backend", "quadrature",
                 "--out-kernel", str(kf)]) == 0
    rows = _rows(kf)
    pts = np.array([float(x) for x in rows[0][1:]])
    K = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    s, t = pts[:, None], pts[None, :]
    x = np.minimum(s, t)
    want = s * t * x - (s + t) / 2 * x**2 + x**3 / 3
    np.testing.assert_allclose(K, want, atol=1e-10)


def test_gp_subcommand(data, tmp_path):
    out = tmp_path / "g.csv"
    rc = main(["gp", "--input", str(data), "--operator", "linear", "--lambda", "0.1",
               "--interval", "0,1", "--grid-size", "11", "--out-curve", str(out)])
    assert rc == 0
    rows = _rows(out)
    assert rows[0] == ["t", "posterior_mean"] and len(rows) == 12
    assert float(rows[1][1]) == 0.0


def test_default_interval_padding(data, tmp_path):
    js = tmp_path / "r.json"
    main(["fit", "--input", str(data), "--out-json", str(js)])
    a, b = json.loads(js.read_text())["interval"]
    t = np.array([float(r[0]) for r in _rows(data)[1:-2]])
    pad = 0.05 * (t.max() - t.min())
    assert a == pytest.approx(t.min() - pad) and b == pytest.approx(t.max() + pad)


def test_config_file_and_flag_precedence(data, tmp_path):
    cfg = tmp_path / "job.yaml"
    js = tmp_path / "r.json"
    cfg.write_text(f"input: {data}\noperator: exp_gamma\ngamma: 2.0\nlambda: 5.0\n"
                   f"out_json: {js}\npath: dense\n")
    assert main(["fit", "--config", str(cfg), "--lambda", "0.5"]) == 0
    out = json.loads(js.read_text())
    assert out["lambda"] == 0.5 and out["path"] == "dense"


def test_job_config_round_trip():
    cfg = JobConfig.from_dict({"command": "fit", "input": "x.csv", "operator": "exp_gamma",
                               "gamma": 2.0, "lambda_grid": [0.1, 1.0], "lam": None,
                               "interval": [0.0, 2.0], "weight_col": "w"})
    again = JobConfig.from_yaml(cfg.to_yaml())
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(Exception):
        JobConfig.from_dict({"nonsense": 1})


def test_operator_json_spec(data, tmp_path):
    js = tmp_path / "r.json"
    rc = main(["fit", "--input", str(data), "--operator", '{"m": 2, "coeffs": [0, 2.0]}',
               "--out-json", str(js)])
    assert rc == 0 and len(json.loads(js.read_text())["alpha"]) == 2


def test_console_entry_point(data, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lspline.cli", "fit", "--input", str(data),
                           "--operator", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.strip().splitlines()[-1].startswith("lspline-error code=2")
