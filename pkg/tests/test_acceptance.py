"""Every acceptance criterion at its stated tolerance, one PASS/FAIL line each.

The suite runs once in-process; criterion 14 additionally reruns the full
``selftest`` subcommand in a fresh process and compares its artifacts with
the in-process ones byte for byte.
"""
import filecmp
import os
import subprocess
import sys

import pytest

from qhd1d.acceptance import CRITERIA, run_all
from qhd1d.cli import write_acceptance

import conftest


@pytest.fixture(scope="module")
def acceptance(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_inprocess")
    results = {r.number: r for r in run_all()}
    write_acceptance(sorted(results.values(), key=lambda r: r.number), str(out))
    return results, out


@pytest.mark.parametrize("number", sorted(c[0] for c in CRITERIA))
def test_criterion(acceptance, number):
    res = acceptance[0][number]
    line = res.line()
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, f"{line}: {res.metrics}"


def test_selftest_rerun_is_byte_identical(acceptance, tmp_path):
    results, first = acceptance
    env = dict(os.environ, QHD1D_OUT=str(tmp_path))
    proc = subprocess.run([sys.executable, "-m", "qhd1d", "selftest"], env=env, capture_output=True, text=True)
    expected = 0 if all(r.passed for r in results.values()) else 4
    assert proc.returncode == expected, proc.stderr
    assert len(proc.stdout.strip().splitlines()) == len(CRITERIA)
    names = sorted(os.listdir(first))
    assert names == sorted(os.listdir(tmp_path)) == ["acceptance.csv", "acceptance.json"]
    _, mismatch, errors = filecmp.cmpfiles(first, tmp_path, names, shallow=False)
    assert not mismatch and not errors
