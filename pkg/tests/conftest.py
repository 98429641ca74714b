import sys
from pathlib import Path

import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dprisk.ingest import InputTables, month_index  # noqa: E402


def make_tables(persons=(), spells=(), employment=(), pensions=()) -> InputTables:
    """Small in-memory InputTables from tuples in CSV column order."""
    p = pd.DataFrame(list(persons), columns=["person_id", "gender", "birth_year"])
    s = pd.DataFrame(list(spells), columns=["person_id", "start_date", "end_date"])
    s["start_date"] = pd.to_datetime(s["start_date"])
    s["end_date"] = pd.to_datetime(s["end_date"])
    e = pd.DataFrame(
        list(employment),
        columns=["person_id", "year", "employer_id", "occupation_code", "personal_oa_year"],
    )
    pe = pd.DataFrame(list(pensions), columns=["person_id", "benefit_kind", "first_month", "last_month"])
    pe["first_month"] = [month_index(m) for m in pe["first_month"]]
    pe["last_month"] = [month_index(m) for m in pe["last_month"]]
    for df, cols in ((p, ["birth_year"]), (e, ["year", "personal_oa_year"]), (pe, ["first_month", "last_month"])):
        for c in cols:
            df[c] = df[c].astype("int64")
    return InputTables(p, s, e, pe)


@pytest.fixture
def tables_factory():
    return make_tables


@pytest.fixture(scope="session")
def small_synth():
    from dprisk.synth import SynthConfig, generate

    return generate(SynthConfig(n_persons=4000, seed=11))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(results, key=lambda k: int(k[1:]))
    for label in order:
        ok, detail = results[label]
        terminalreporter.write_line(f"{label} {'PASS' if ok else 'FAIL'}: {detail}")
