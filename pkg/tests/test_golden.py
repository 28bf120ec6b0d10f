import importlib.util
import json
import pathlib

import pytest

HERE = pathlib.Path(__file__).parent / "golden"
_spec = importlib.util.spec_from_file_location("golden_cases", HERE / "cases.py")
cases = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(cases)

EXPECTED = json.loads(cases.GOLDEN.read_text())
COMPUTED = cases.compute()


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_closed_form_case_bit_exact(name):
    assert COMPUTED[name] == EXPECTED[name]


def test_no_case_missing_from_golden_file():
    assert sorted(COMPUTED) == sorted(EXPECTED)


def test_cli_csv_bit_exact(tmp_path):
    assert cases.cli_csv(tmp_path) == cases.CLI_GOLDEN.read_bytes()
