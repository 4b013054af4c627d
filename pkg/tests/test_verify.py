import json

import numpy as np
import pytest

from xcflow import _mutation
from xcflow.verify import (
    CHECKS,
    CheckResult,
    SuiteConfig,
    SuiteContext,
    fit_order,
    rel_residual,
    run_check,
    run_suite,
    scaled_residual,
)


def test_residual_helpers():
    assert rel_residual([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rel_residual([3.0], [1.0]) == pytest.approx(2 / 4)
    assert rel_residual([], []) == 0.0
    assert scaled_residual([1e-3], [10.0], [-10.0]) == pytest.approx(1e-3 / 11)
    assert fit_order([0.1, 0.05, 0.025], [1e-4, 6.25e-6, 3.90625e-7]) == pytest.approx(4.0)


def test_unknown_check_rejected():
    with pytest.raises(ValueError):
        SuiteConfig(only=("check_nothing",))
    with pytest.raises(ValueError):
        SuiteConfig(grid_n=(16,))


def test_homogeneous_suite_passes_and_serialises():
    report = run_suite(SuiteConfig(grid=False, samples=300))
    assert report.passed, report.to_text()
    data = json.loads(report.to_json())
    assert set(data) >= {"version", "config", "config_hash", "checks", "notes", "passed"}
    for entry in data["checks"]:
        assert {"check", "backend", "residual", "tolerance", "order", "passed"} <= set(entry)
    assert {c["check"] for c in data["checks"]} == set(CHECKS)
    assert "overall: PASS" in report.to_text()


def test_mutation_fails_algebraic_check():
    ctx = SuiteContext(SuiteConfig(grid=False, samples=100))
    assert all(r.passed for r in run_check("P_mu", ctx))
    with _mutation.flipped("P_mu"):
        assert not any(r.passed for r in run_check("P_mu", ctx))
    assert _mutation.sign("P_mu") == 1.0


def test_crashing_check_becomes_failure(monkeypatch):
    def boom(ctx):
        raise RuntimeError("kaput")
    monkeypatch.setitem(CHECKS, "symbol", (boom, "symbol"))
    (res,) = run_check("symbol", SuiteContext(SuiteConfig(grid=False)))
    assert isinstance(res, CheckResult) and not res.passed
    assert "kaput" in res.metadata["error"]


def test_grid_pass_on_small_resolutions():
    cfg = SuiteConfig(grid_n=(16, 32), only=("bianchi", "evolution_P"))
    report = run_suite(cfg)
    grid = [r for r in report.results if r.backend == "grid"]
    assert len(grid) == 2
    for r in grid:
        assert r.passed and r.order >= 3.8
        assert r.metadata["N"] == [16, 32]
    assert np.isfinite([r.residual for r in report.results]).all()
