"""Market-implied sustainability scores from SFDR fund holdings, and portfolio tilts built on them."""

__version__ = "0.1.0"

from .backtest import BacktestConfig, BacktestReport, run_backtest, run_fixed_tilt, run_opt_tilt, random_validation
from .data import AlignedDataset, HoldingsPanel, SfdrLabel, load_dataset, load_panel
from .econometrics import MMQR, mmqr_fit, ols, vif
from .optimize import BoundSpec, PortfolioOptimizer, ScenarioSet, max_sharpe, min_cvar, min_evar, min_variance
from .risk import cvar_alpha, evar_alpha, expectile, metric_panel, var_alpha
from .scoring import compute_smis, compute_smisw, smis_test, smisw_test
from .selection import StrategyKind, StrategySpec, build_selection, quadrant_select, rank_select
from .synth import SynthConfig, generate

__all__ = [
    "AlignedDataset", "BacktestConfig", "BacktestReport", "BoundSpec", "HoldingsPanel", "MMQR",
    "PortfolioOptimizer", "ScenarioSet", "SfdrLabel", "StrategyKind", "StrategySpec", "SynthConfig",
    "build_selection", "compute_smis", "compute_smisw", "cvar_alpha", "evar_alpha", "expectile", "generate",
    "load_dataset", "load_panel", "max_sharpe", "metric_panel", "min_cvar", "min_evar", "min_variance",
    "mmqr_fit", "ols", "quadrant_select", "random_validation", "rank_select", "run_backtest",
    "run_fixed_tilt", "run_opt_tilt", "smis_test", "smisw_test", "var_alpha", "vif",
]
