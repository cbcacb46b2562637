"""StochLTM: stochastic network loading with a link transmission model."""

import logging
import os

# Centralized logging configuration
# This prevents conflicts from multiple basicConfig calls in submodules
logging.basicConfig(
    level=getattr(logging, os.getenv("STOCHLTM_LOG_LEVEL", "INFO").upper(), logging.INFO),
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S"
)
