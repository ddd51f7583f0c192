"""Smoke test for the `belh` extension module.

Install with `pip install -e crates/python --no-build-isolation`, then run
`python3 python/smoke_test.py` (or `pytest python/`).
"""

import math
import pathlib

import belh

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def read(name):
    return (CONFIGS / name).read_text()


def test_version():
    assert belh.version()


def test_verify_suite_passes():
    rows = belh.verify(seed=1, samples=200, coercivity_samples=2000, grid_n=8, directions=2)
    assert rows
    for name, samples, residual, tolerance, passed in rows:
        assert passed, (name, residual, tolerance)


def test_cancellation_residual_is_roundoff():
    for xi in (-1.0, 0.0, 0.5):
        assert belh.cancellation_residual(xi, samples=500) <= 1e-12


def test_smoke_run():
    cols = belh.run(read("smoke.toml"))
    assert len(cols["time"]) == 11
    assert abs(cols["time"][-1] - 0.1) < 1e-12
    assert all(math.isfinite(v) for v in cols["kinetic"])
    assert len(cols["physical_energy_residual"]) == 11
    other = belh.run(read("smoke.toml"), seed=8)
    assert other["kinetic"] != cols["kinetic"]


def test_bad_config_raises_value_error():
    try:
        belh.run(read("smoke.toml").replace("dt = 0.01\n", ""))
    except ValueError as e:
        assert "dt" in str(e)
    else:
        raise AssertionError("missing dt accepted")


def test_uniaxial_demo():
    rows = belh.uniaxial(read("uniaxial_demo.toml"))
    assert len(rows) == 3
    stable, focusing = rows[1], rows[2]
    assert stable["c"] == 1.0 and stable["blowup"] == 0.0
    assert focusing["c"] == -1.0 and focusing["blowup"] == 1.0
    assert 0.0 < focusing["blowup_time"] < 0.05


def test_compare_uniaxial_short():
    text = read("compare_uniaxial.toml").replace("n = 32", "n = 16").replace("t_final = 0.5", "t_final = 0.02")
    r = belh.compare_uniaxial(text)
    assert r["passed"] == 1.0 and r["max_diff"] <= 1e-8


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"{name}: ok")
    print("python smoke test passed")
