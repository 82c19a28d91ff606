import json
import math
import subprocess
import sys

import pytest

from denstrack import cli
from denstrack.errors import NumericalError
from denstrack.grid import GridSpec, Gaussian, init_density, write_density_csv

OU_PARAMS = [0, -1, 1]


def write_config(path, **overrides):
    doc = {
        "model": {"family": "affine", "params": OU_PARAMS},
        "grid": {"dim": 1, "lower": -6, "upper": 6, "cells": 256},
        "initial": {"kind": "gaussian", "mean": 0.0, "variance": 0.25},
        "time": {"t": 1.0, "n": 16},
        "mode": "cdf",
        "seed": 3,
        "output_dir": "out",
    }
    for key, value in overrides.items():
        if value is None:
            doc.pop(key, None)
        else:
            doc[key] = value
    path.write_text(json.dumps(doc))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def read_tree(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


# -- propagate --------------------------------------------------------------

def test_propagate_writes_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.json", snapshot_every=8)
    assert run("propagate", cfg) == 0
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {
        "density.csv", "steps.csv", "summary.json", "snapshot_000008.csv", "snapshot_000016.csv"}
    summary = json.loads((out / "summary.json").read_text())
    leak = summary["leaked_mass"]
    assert 1 - leak - 1e-9 <= summary["mass"] <= 1.0
    steps = (out / "steps.csv").read_text().splitlines()
    assert steps[0] == "step,tau,mass_in,mass_out,leakage" and len(steps) == 17
    assert (out / "density.csv").read_text().startswith("x,value\n")


def test_propagate_reruns_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json", snapshot_every=4)
    assert run("propagate", cfg, "--output-dir", tmp_path / "a") == 0
    assert run("propagate", cfg, "--output-dir", tmp_path / "b", "--threads", "1") == 0
    assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")


def test_outputs_need_force(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert run("propagate", cfg) == 0
    before = read_tree(tmp_path / "out")
    assert run("propagate", cfg, "--n", 8) == 2
    assert "--force" in capsys.readouterr().err
    assert read_tree(tmp_path / "out") == before
    assert run("propagate", cfg, "--n", 8, "--force") == 0
    assert read_tree(tmp_path / "out") != before


def test_flag_overrides(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("propagate", cfg, "--n", 4, "--t", 0.5) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["n"] == 4 and summary["t"] == 0.5


@pytest.mark.parametrize("overrides, field", [
    ({"grid": {"lower": 2, "upper": 1, "cells": 64}}, "grid.lower"),
    ({"grid": {"lower": -1, "upper": 1, "cells": 4}}, "grid"),
    ({"colour": "red"}, "colour"),
    ({"initial": {"kind": "gaussian", "mean": 0, "width": 1}}, "initial"),
    ({"initial": {"kind": "laplace"}}, "initial.kind"),
    ({"model": {"family": "affine", "params": [0, -1, 0]}}, "model"),
    ({"model": {"family": "affine"}}, "model.params"),
    ({"mode": "spectral"}, "mode"),
    ({"time": {"t": -1, "n": 4}}, "time.t"),
    ({"time": {"t": 1, "n": 0}}, "time.n"),
    ({"time": {"t": 1, "steps": 4}}, "time"),
    ({"model": None}, "model"),
])
def test_invalid_config_exits_2_naming_field(tmp_path, capsys, overrides, field):
    cfg = write_config(tmp_path / "c.json", **overrides)
    assert run("propagate", cfg) == 2
    err = capsys.readouterr().err
    assert field in err
    assert not (tmp_path / "out").exists()


def test_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("propagate", bad) == 2
    assert run("propagate", tmp_path / "missing.json") == 2
    assert "not found" in capsys.readouterr().err


def test_missing_steps(tmp_path):
    cfg = write_config(tmp_path / "c.json", time={"t": 1.0})
    assert run("propagate", cfg) == 2


def test_file_initial_density_relative_to_config(tmp_path):
    g = GridSpec(-6, 6, 256)
    (tmp_path / "data").mkdir()
    write_density_csv(tmp_path / "data" / "u0.csv", init_density(Gaussian(1.0, 0.5), g))
    cfg = write_config(tmp_path / "c.json", initial={"kind": "file", "path": "data/u0.csv"})
    assert run("propagate", cfg) == 0
    short = tmp_path / "data" / "short.csv"
    short.write_text("x,value\n0.0,1.0\n")
    cfg2 = write_config(tmp_path / "c2.json", initial={"kind": "file", "path": "data/short.csv"},
                        output_dir="out2")
    assert run("propagate", cfg2) == 2


def test_two_dimensional_propagation(tmp_path):
    cfg = write_config(
        tmp_path / "c.json",
        model={"family": "affine", "params": [0, 0, -1, 0, 0, -1, 1, 0, 0, 1]},
        grid={"dim": 2, "lower": [-4, -4], "upper": [4, 4], "cells": [40, 40]},
        initial={"kind": "gaussian", "mean": [0, 0], "variance": [0.5, 0.5]},
        time={"t": 0.5, "n": 2}, mode="quadrature")
    assert run("propagate", cfg) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(summary["moment_2"]) == 2
    assert (tmp_path / "out" / "density.csv").read_text().startswith("x,y,value\n")
    cfg_bad = write_config(tmp_path / "c2.json", mode="cdf",
                           grid={"dim": 2, "lower": [-4, -4], "upper": [4, 4], "cells": [40, 40]})
    assert run("propagate", cfg_bad) == 2


def test_numerical_failure_exits_1(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise NumericalError("non-finite values after step 3")

    monkeypatch.setattr(cli, "evolve", boom)
    cfg = write_config(tmp_path / "c.json")
    assert run("propagate", cfg) == 1
    assert "NumericalError" in capsys.readouterr().err


# -- converge ---------------------------------------------------------------

def test_converge_reports_rate(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", grid={"lower": -8, "upper": 8, "cells": 2048},
                       time={"t": 1.0, "n_list": [8, 16, 32, 64, 128]})
    assert run("converge", cfg) == 0
    out = capsys.readouterr().out
    rate = float(out.split("fitted rate:")[1].split()[0])
    assert rate >= 0.85
    lines = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
    assert lines[0] == "n,error,seconds" and len(lines) == 6
    side = json.loads((tmp_path / "out" / "convergence.json").read_text())
    assert side["fitted_rate"] == pytest.approx(rate, abs=1e-4)
    assert side["config"]["n_list"] == [8, 16, 32, 64, 128]


def test_converge_two_rows_warns(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", time={"t": 1.0, "n_list": [8, 16]})
    assert run("converge", cfg) == 0
    captured = capsys.readouterr()
    assert "no rate" in captured.err
    assert "n/a" in captured.out
    assert len((tmp_path / "out" / "convergence.csv").read_text().splitlines()) == 3


def test_converge_cauchy_is_monotone(tmp_path):
    cfg = write_config(tmp_path / "c.json", grid={"lower": -8, "upper": 8, "cells": 512},
                       initial={"kind": "cauchy", "loc": 0, "scale": 1},
                       time={"t": 1.0, "n_list": [4, 8, 16]})
    assert run("converge", cfg) == 0
    rows = (tmp_path / "out" / "convergence.csv").read_text().splitlines()[1:]
    errors = [float(r.split(",")[1]) for r in rows]
    assert errors == sorted(errors, reverse=True)


def test_converge_errors(tmp_path):
    cfg = write_config(tmp_path / "c.json", time={"t": 1.0, "n": 4})
    assert run("converge", cfg) == 2
    cfg = write_config(tmp_path / "c2.json", model={"family": "sine-diffusion", "params": [0, -1, 1, 0.5]},
                       time={"t": 1.0, "n_list": [4, 8]})
    assert run("converge", cfg) == 2


# -- consistency ------------------------------------------------------------

def consistency_config(path, **overrides):
    base = dict(grid={"lower": -6, "upper": 6, "cells": 4096},
                initial={"kind": "bump", "center": 0.0, "halfwidth": 2.0},
                time={"tau_list": [0.02, 0.01, 0.005]}, mode=None)
    base.update(overrides)
    return write_config(path, **base)


def test_consistency_table(tmp_path):
    assert run("consistency", consistency_config(tmp_path / "c.json")) == 0
    lines = (tmp_path / "out" / "consistency.csv").read_text().splitlines()
    assert lines[0] == "tau,residual,ratio" and len(lines) == 4
    ratios = [float(l.split(",")[2]) for l in lines[1:]]
    assert max(ratios) / min(ratios) < 2.0


def test_consistency_preconditions(tmp_path, capsys):
    assert run("consistency", consistency_config(tmp_path / "a.json", time={"tau_list": []})) == 2
    assert "tau_list" in capsys.readouterr().err
    gauss = consistency_config(tmp_path / "b.json", initial={"kind": "gaussian", "mean": 0, "variance": 1})
    assert run("consistency", gauss) == 2
    assert "bump" in capsys.readouterr().err


# -- weakgap and mc ---------------------------------------------------------

def test_weakgap(tmp_path, capsys):
    assert run("weakgap", "--n", 8, "--output-dir", tmp_path / "w") == 0
    out = capsys.readouterr().out
    gap = float(out.split("L1 gap")[1].split()[0])
    assert gap == pytest.approx(2 / math.pi, abs=1e-4)
    data = json.loads((tmp_path / "w" / "weakgap.json").read_text())
    assert data["n"] == 8 and len(data["charfn_gap"]) == 3
    assert run("weakgap", "--n", 0, "--output-dir", tmp_path / "z") == 2


def mc_config(path, paths=20_000, **kw):
    return write_config(path, grid={"lower": -4, "upper": 4, "cells": 64},
                        initial={"kind": "gaussian", "mean": 0, "variance": 1e-4},
                        time={"t": 1.0, "n": 16}, mc={"paths": paths}, **kw)


def test_mc_reruns_identically(tmp_path):
    cfg = mc_config(tmp_path / "c.json")
    assert run("mc", cfg, "--output-dir", tmp_path / "a") == 0
    assert run("mc", cfg, "--output-dir", tmp_path / "b", "--threads", "1") == 0
    assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")
    assert run("mc", cfg, "--output-dir", tmp_path / "c", "--seed", 4) == 0
    assert read_tree(tmp_path / "a") != read_tree(tmp_path / "c")
    summary = json.loads((tmp_path / "a" / "mc_summary.json").read_text())
    assert summary["mass"] + summary["leaked_mass"] == pytest.approx(1.0, abs=1e-12)


def test_mc_needs_enough_paths(tmp_path, capsys):
    assert run("mc", mc_config(tmp_path / "c.json", paths=5_000)) == 2
    assert "paths" in capsys.readouterr().err
    assert run("mc", write_config(tmp_path / "d.json")) == 2


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    proc = subprocess.run([sys.executable, "-m", "denstrack.cli", "propagate", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "denstrack.cli", "propagate", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == "" and "exists" in proc.stderr
