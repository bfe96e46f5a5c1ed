"""Quickest change detection for periodic (i.p.i.d.) count streams."""
from .model import *  # noqa: F401,F403
from .detect import *  # noqa: F401,F403
from .evaluate import *  # noqa: F401,F403
from .config import ConfigError, RunConfig, parse_config, load_config  # noqa: F401
from .io import IngestError, ingest_csv, sliding_average, emit_report, write_counts_csv  # noqa: F401
from .scenario import ScenarioOutput, run_scenario, synthetic_days  # noqa: F401

__version__ = "0.1.0"
