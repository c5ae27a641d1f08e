import json

import numpy as np
import pytest
import yaml

from latticehall.harness import ConfigError, ExitCode, load_config, validate
from latticehall.harness.cache import CacheMismatch, EigenCache, hamiltonian_key
from latticehall.harness.cli import main
from latticehall.models import hofstadter_hubbard
from latticehall.spectra import write_eig


def _write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


SPECTRUM = {"kind": "spectrum",
            "model": {"preset": "hofstadter_hubbard", "params": {"L1": 4, "L2": 2, "flux": [1, 4], "N": 2}},
            "params": {"levels": 6}, "output": "out", "workers": 1}


def test_valid_config_has_no_diagnostics():
    assert validate(SPECTRUM) == []


def test_diagnostics_are_aggregated():
    bad = {"kind": "kubo-vs-time",
           "model": {"preset": "hofstadter_hubbard", "params": {"L1": 5, "L2": 6, "flux": [1, 5], "N": 5}},
           "params": {"bogus": 1}, "workers": 0}
    errs = [d for d in validate(bad) if d["level"] == "error"]
    fields = {d["field"] for d in errs}
    assert {"model.L1", "model", "params.bogus", "workers"} <= fields
    assert any("even" in d["message"] for d in errs)
    assert any("dimension" in d["message"] for d in errs)


def test_odd_L2_warns_only():
    cfg = dict(SPECTRUM, model={"preset": "hofstadter_hubbard", "params": {"L1": 4, "L2": 3, "flux": [1, 4], "N": 2}})
    diags = validate(cfg)
    assert diags and all(d["level"] == "warning" for d in diags)


def test_incommensurate_and_non_hermitian():
    cfg = dict(SPECTRUM, model={"preset": "hofstadter", "params": {"L1": 4, "L2": 2, "flux": [1, 3], "N": 1}})
    assert any("incommensurate" in d["message"] for d in validate(cfg))
    explicit = {"lattice": [2, 2], "N": 1,
                "hoppings": [{"to": [1, 0], "from": [0, 0], "t": [0.0, 1.0]},
                             {"to": [0, 0], "from": [1, 0], "t": [0.0, 1.0]}]}
    assert any("Hermitian" in d["message"] for d in validate(dict(SPECTRUM, model=explicit)))


def test_overrides(tmp_path):
    p = _write(tmp_path, SPECTRUM)
    cfg = load_config(p, ["params.levels=9", "model.params.V_nn=3.5"])
    assert cfg.params["levels"] == 9 and cfg.model["params"]["V_nn"] == 3.5
    assert cfg.output == str(tmp_path / "out")
    with pytest.raises(ConfigError):
        load_config(p, ["nonsense"])


def test_content_hash_ignores_output(tmp_path):
    a = load_config(_write(tmp_path, SPECTRUM))
    b = load_config(_write(tmp_path, dict(SPECTRUM, output="elsewhere"), "d.yaml"))
    assert a.content_hash() == b.content_hash()


def test_cli_run_writes_artifacts(tmp_path):
    p = _write(tmp_path, SPECTRUM)
    cache = tmp_path / "cache"
    assert main(["run", str(p), "--cache-dir", str(cache), "--quiet"]) == ExitCode.OK
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert manifest["cache"]["misses"] == 1 and "tolerances" in manifest
    assert report["schema_version"] == 1 and report["results"]["q"] >= 1
    first = (out / "report.json").read_text()
    assert main(["run", str(p), "--cache-dir", str(cache), "--quiet"]) == ExitCode.OK
    assert json.loads((out / "manifest.json").read_text())["cache"]["hits"] == 1
    assert (out / "report.json").read_text() == first
    assert main(["report", str(out)]) == 0
    assert main(["cache", "inspect", "--cache-dir", str(cache)]) == 0
    assert main(["cache", "clear", "--cache-dir", str(cache)]) == 0
    assert not list(cache.glob("*.eig"))


def test_cli_exit_codes(tmp_path):
    bad = dict(SPECTRUM, model={"preset": "hofstadter_hubbard", "params": {"L1": 3, "L2": 2, "flux": [1, 3], "N": 2}})
    assert main(["validate", str(_write(tmp_path, bad, "bad.yaml"))]) == ExitCode.CONFIG
    assert main(["run", str(_write(tmp_path, bad, "bad.yaml")), "--quiet"]) == ExitCode.CONFIG
    assert main(["validate", str(_write(tmp_path, SPECTRUM))]) == ExitCode.OK
    gapless = {"kind": "chern", "model": {"preset": "hofstadter", "params": {"L1": 2, "L2": 2, "N": 2}},
               "params": {"grid": 4}, "output": "gapless", "cache": False, "workers": 1}
    p = _write(tmp_path, gapless, "gapless.yaml")
    assert main(["run", str(p), "--quiet"]) == ExitCode.NO_MULTIPLET
    err = json.loads((tmp_path / "gapless" / "error.json").read_text())
    assert err["exit_code"] == 3 and err["error"] in ("NoGappedMultiplet", "GapClosure")


def test_chern_run_csv(tmp_path):
    cfg = {"kind": "chern", "model": {"preset": "hofstadter", "params": {"L1": 4, "L2": 2, "flux": [1, 4], "N": 2}},
           "params": {"grid": 4, "q_hint": 1, "sigma_point": [0.3, 0.7]}, "output": "ch", "cache": False, "workers": 1}
    code = main(["run", str(_write(tmp_path, cfg)), "--quiet"])
    rep = json.loads((tmp_path / "ch" / "report.json").read_text())["results"]
    assert code == ExitCode.OK, rep["bound_checks"]
    assert isinstance(rep["p"], int) and rep["grid"]["size"] >= 4
    lines = (tmp_path / "ch" / "curvature.csv").read_text().splitlines()
    assert lines[0] == "phi1,phi2,F" and len(lines) == 1 + rep["grid"]["size"] ** 2


def test_cache_spot_check_detects_corruption(tmp_path):
    H = hofstadter_hubbard(4, 2, (1, 4), N=2).hamiltonian()
    cache = EigenCache(tmp_path)
    eig = cache.solve(H)
    key = hamiltonian_key(H, None)
    bad = type(eig)(eig.values + 1e-6, eig.vectors, eig.complete)
    write_eig(cache.path(key), key, bad)
    import latticehall.harness.cache as cmod
    old = cmod.SPOT_CHECK_EVERY
    cmod.SPOT_CHECK_EVERY = 1
    try:
        with pytest.raises(CacheMismatch):
            cache.solve(H)
    finally:
        cmod.SPOT_CHECK_EVERY = old
    assert np.array_equal(EigenCache(tmp_path, enabled=False).solve(H).values, eig.values)
