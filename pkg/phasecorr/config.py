import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Quadrature convention shared by every module: x(phi) = a e^{-i phi} + a^dag e^{i phi}
QUADRATURE_CONVENTION = "x=a*exp(-i phi)+h.c.; vacuum variance 1"

DEFAULT_CACHE_DIR = Path(
    os.environ.get("PHASECORR_CACHE_DIR", Path.home() / ".cache" / "phasecorr")
)
DEFAULT_THREADS = int(os.environ.get("PHASECORR_THREADS", "1"))
LOG_LEVEL = os.environ.get("PHASECORR_LOG_LEVEL", "INFO")
LOG_FILE = os.environ.get("PHASECORR_LOG_FILE")

# Records per work unit; fixed so results do not depend on the thread count
BLOCK_SIZE = 1 << 17
SIMULATION_CHUNK = 1 << 18

# Phase binning, 12 degree bins
DEFAULT_N_BINS = 30

# Filter table
FILTER_STEP = 2e-3
FILTER_T_MAX = 7.0
FILTER_POINT_TOLERANCE = 1e-10

# Kernel quadrature
W_MAX = 2.5
DEFAULT_W = 1.3
KERNEL_TAIL = 1e-16
KERNEL_PANEL_WIDTH = 0.25
GAUSS_ORDER = 16

# Pattern tables
PATTERN_X_RANGE = (-12.0, 12.0)
PATTERN_A_RANGE = (0.0, 3.5)
PATTERN_STEPS = (0.004, 0.004)
PATTERN_TOLERANCE = 1e-6

# Photon-number tomography
DEFAULT_CUTOFF = 5
NUMBER_X_MAX = 12.0
NUMBER_X_STEP = 2.0 ** -9
NUMBER_S_MAX = 14.0
DEFAULT_TOMO_BATCHES = 20

# Quasiprobability grid and ensembles
DEFAULT_GRID = (0.0, 3.0, 0.1)
DEFAULT_ENSEMBLES = 50
# Edge |P| relative to the peak
BOUNDARY_TOLERANCE = 5e-3

# Canonical simulation point
CANONICAL = {
    "squeeze_db": 7.4,
    "eta": 0.60,
    "w": 1.3,
}

SCHEMA_VERSION = 1
