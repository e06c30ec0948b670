"""Constants for the msfit package."""

import json
import logging
from pathlib import Path

DOMAIN = "msfit"
LOGGER = logging.getLogger(__package__)
VERSION = json.loads((Path(__file__).parent / "manifest.json").read_text())["version"]

# Default four-state hospital pathway
STATE_HOSPITAL = "Hospital"
STATE_ICU = "ICU"
STATE_DEATH = "Death"
STATE_DISCHARGE = "Discharge"

# Observation statuses
STATUS_EVENT = 1
STATUS_CENSORED = 2
STATUS_PARTIAL = 3
STATUSES = (STATUS_EVENT, STATUS_CENSORED, STATUS_PARTIAL)

# Observation CSV columns
COL_SUBJECT = "subject_id"
COL_FROM = "from_state"
COL_TO = "to_state"
COL_TIME = "time_days"
COL_STATUS = "status"
BASE_COLUMNS = (COL_SUBJECT, COL_FROM, COL_TO, COL_TIME, COL_STATUS)

# Status-3 scope
SCOPE_DEATH = "death"
SCOPE_ALL_BUT_DISCHARGE = "all_but_discharge"

# Framework tags
FRAMEWORK_CSH = "csh"
FRAMEWORK_MIXTURE = "mixture"
FRAMEWORK_BOTH = "both"

# Data handling
DEFAULT_ZERO_TIME = 0.5  # days

# Distributions
Q_ZERO_TOL = 1e-5

# Optimizer
DEFAULT_MAX_ITER = 1000
DEFAULT_GTOL = 1e-5
DEFAULT_STEP_TOL = 1e-10
ACCEPT_GTOL = 1e-2
GRADIENT_STEP = 1e-6
HESSIAN_STEP = 1e-4
EIGEN_FLOOR = 1e-10

# EM
DEFAULT_EM_TOL = 1e-8
DEFAULT_EM_MAX_ITER = 500
DEFAULT_INNER_TOL = 1e-6
COEF_CAP = 30.0
MIN_MEMBERSHIP = 1e-6

# Forward equation
ODE_RTOL = 1e-8
ODE_ATOL = 1e-8
ODE_T0 = 1e-6
RESIDUAL_TOL = 1e-6
DEFAULT_HORIZON = 1000.0  # days
HORIZON_FACTOR = 10.0

# Derived quantities
DEFAULT_B = 100
DEFAULT_S = 100_000
ULTIMATE_DRAWS = 100_000
MIN_LOS_SAMPLE = 50
INTERVAL_LEVEL = 0.95
LOS_QUANTILES = (0.05, 0.5, 0.95)

# Run config keys
CONF_STRUCTURE = "structure"
CONF_DATA = "data"
CONF_FRAMEWORK = "framework"
CONF_CSH = "csh"
CONF_MIXTURE = "mixture"
CONF_CANDIDATES = "candidates"
CONF_OPTIMIZER = "optimizer"
CONF_EM = "em"
CONF_B = "B"
CONF_S = "S"
CONF_SEED = "seed"
CONF_ZERO_TIME = "zero_time"
CONF_PARTIAL_SCOPE = "partial_outcome_scope"
CONF_WORKERS = "workers"
CONF_OUTPUT = "output"
CONF_SIMULATE = "simulate"

DEFAULT_SEED = 1
DEFAULT_WORKERS = 1

# Named random streams
STREAM_SIMULATE = "simulate"
STREAM_DRAWS = "draws"
STREAM_QUANTITIES = "quantities"

# Output file names
FILE_OBSERVATIONS = "observations.csv"
FILE_TRUTH = "truth.json"
FILE_RESULTS = "results.json"
FILE_SELECTION = "selection.csv"
FILE_SUBGROUPS = "subgroup_loglik.csv"
FILE_QUANTITIES = "quantities.csv"
FILE_QUANTITIES_JSON = "quantities.json"
FILE_GOF_AJ = "gof_aalen_johansen.csv"
FILE_GOF_KM = "gof_kaplan_meier.csv"
FILE_GOF_HIST = "gof_histogram.csv"

# Exit codes
EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2
