import numpy as np
import pandas as pd
import pytest

from smislab.data import HoldingsPanel, SfdrLabel, parse_quarter
from smislab.synth import SynthConfig, generate


def make_panel(rows, labels):
    """rows: (fund_id, quarter, asset_id, weight); labels: fund_id -> '6'|'8'|'9'|'NA'."""
    h = pd.DataFrame(rows, columns=["fund_id", "quarter", "asset_id", "weight"])
    h["quarter"] = pd.PeriodIndex([parse_quarter(q) for q in h["quarter"]], freq="Q-DEC")
    funds = pd.DataFrame({"sfdr_label": [SfdrLabel.parse(v) for v in labels.values()],
                          "aum_mln": 100.0}, index=pd.Index(list(labels), name="fund_id")).sort_index()
    return HoldingsPanel(h, funds)


@pytest.fixture
def hand_panel():
    # Art9: F1 holds A, F2 holds A, F3 holds B; others: G1..G5, only G1 holds A
    rows = [("F1", "2020Q1", "A", 0.5), ("F1", "2020Q1", "B", 0.0),
            ("F2", "2020Q1", "A", 0.3),
            ("F3", "2020Q1", "B", 0.4),
            ("G1", "2020Q1", "A", 0.2), ("G2", "2020Q1", "B", 0.1), ("G3", "2020Q1", "C", 0.2),
            ("G4", "2020Q1", "C", 0.3), ("G5", "2020Q1", "C", 0.5),
            ("N1", "2020Q1", "A", 0.9)]
    labels = {"F1": "9", "F2": "9", "F3": "9", "G1": "8", "G2": "8", "G3": "6", "G4": "8", "G5": "6",
              "N1": "NA"}
    return make_panel(rows, labels)


SMALL = SynthConfig(n_assets=120, n_art9=20, n_art8=40, n_art6=10, n_unlabeled=2, n_quarters=8,
                    rng_seed=11)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SMALL)


@pytest.fixture(scope="session")
def small_csv_dir(tmp_path_factory, small_synth):
    from smislab.synth import write_dataset
    d = tmp_path_factory.mktemp("synth")
    write_dataset(small_synth, d)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
