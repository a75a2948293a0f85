import os
import logging

import psutil

from dotenv import load_dotenv

# Load environment variables (a local .env file wins over nothing, never over the shell)
load_dotenv()

logger = logging.getLogger(__name__)

# Output and logging
OUTPUT_DIR = os.getenv("LOCALTIME_OUTPUT_DIR", os.path.join(os.getcwd(), "results"))
LOG_LEVEL = os.getenv("LOCALTIME_LOG_LEVEL", "INFO")
SHOW_PROGRESS = os.getenv("LOCALTIME_PROGRESS", "1") not in ("0", "false", "no")

# Monte Carlo defaults
DEFAULT_STEP_CAP = int(os.getenv("LOCALTIME_STEP_CAP", 10**8))   # per excursion
DEFAULT_REPLICATES = int(os.getenv("LOCALTIME_REPLICATES", 8))     # fixed split, independent of workers
DEFAULT_MASTER_SEED = int(os.getenv("LOCALTIME_SEED", 20240101))

# Worker override (unset = available physical cores)
WORKERS_OVERRIDE = os.getenv("LOCALTIME_WORKERS")

# Exact-computation tolerances
LADDER_RESIDUAL_TOL = 1e-10
RENEWAL_STOP_MASS = 1e-12
HEAVY_TAIL_MASS_LOSS = 1e-12
STRIP_FACTOR = 8


def default_workers() -> int:
    """Worker count: LOCALTIME_WORKERS if set, else physical cores"""
    if WORKERS_OVERRIDE:
        try:
            return max(1, int(WORKERS_OVERRIDE))
        except ValueError:
            logger.warning(f"⚠️ Ignoring invalid LOCALTIME_WORKERS={WORKERS_OVERRIDE!r}")
    cores = psutil.cpu_count(logical=False)
    return max(1, cores or os.cpu_count() or 1)


def configure_logging(level: str = None):
    """Configure the root logger once for command-line use"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
