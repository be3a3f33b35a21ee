from .config import ALL_VARIANTS, ExperimentConfig, config_from_parser, load_config
from .harness import (
    Aggregate,
    CheckResult,
    Report,
    aggregate_seeds,
    check_orderings,
    ensure_route_predictor,
    eval_scenarios,
    evaluate_agent,
    format_table,
    run_seed,
    run_variant,
    summarize_report,
    write_summary_csv,
)

__all__ = [
    "ALL_VARIANTS", "ExperimentConfig", "config_from_parser", "load_config", "Aggregate", "CheckResult",
    "Report", "aggregate_seeds", "check_orderings", "ensure_route_predictor", "eval_scenarios",
    "evaluate_agent", "format_table", "run_seed", "run_variant", "summarize_report", "write_summary_csv",
]
