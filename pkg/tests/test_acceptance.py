"""Acceptance suite: every criterion at desk-profile sizes and tolerances.

The whole report is computed once per session; each test asserts one entry
and prints its pass/fail line.
"""
import json

import pytest

from stlab.config import ExperimentConfig
from stlab.verify import CRITERIA, SCHEMA, verify_all

pytestmark = pytest.mark.acceptance

NAMES = {
    1: "closed_forms", 2: "kappa_asymptotics", 3: "sampler", 4: "tails", 5: "csbp_bounds",
    6: "branching", 7: "cross_generator", 8: "mass_tail", 9: "exponents",
    10: "spectrum_dims", 11: "reproducibility",
}


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "verify_report.json"
    rep = verify_all(ExperimentConfig(profile="desk", seed=1), out=out)
    assert json.loads(out.read_text())["schema"] == SCHEMA
    return {c["id"]: c for c in rep["criteria"]}


def _line(c):
    status = "PASS" if c["pass"] else "FAIL"
    err = f" error={c['error']}" if c["error"] else ""
    return f"[{status}] criterion {c['id']:2d} {c['name']}: observed={c['observed']}{err}"


@pytest.mark.parametrize("cid", sorted(CRITERIA), ids=lambda i: f"{i:02d}_{NAMES[i]}")
def test_criterion(report, cid, capsys):
    c = report[cid]
    with capsys.disabled():
        print("\n" + _line(c))
    assert c["error"] is None, c["details"].get("traceback")
    assert c["pass"], c


def test_report_covers_all_criteria(report):
    assert sorted(report) == list(range(1, 12))
    for c in report.values():
        assert {"id", "name", "target", "observed", "tolerance", "pass", "runtime"} <= set(c)
