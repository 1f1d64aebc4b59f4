import math

DEFAULT_B = 1000
DEFAULT_SEED = 0
DEFAULT_ALPHA_LEVELS = (0.01, 0.05, 0.10)
DEFAULT_LEVEL = 0.05
DEFAULT_MULTIPLIER = "mammen"
DEFAULT_GRID_MODE = "sample-pairs"
DEFAULT_MAX_GRID_POINTS = 250_000
DEFAULT_THREADS = 1

# series logit

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_CLIP_EPSILON = 1e-3
DEFAULT_RIDGE_RETRIES = 3
DEFAULT_OVERLAP_WARN = 0.01
HESSIAN_RIDGE_FACTOR = 1e-8
SEPARATION_MARGIN = 30.0
SEPARATION_COEF_MAX = 1e8

# influence functions

DEFAULT_RISK_SET = "arm"
DEFAULT_GAMMA0_FORM = "exp"
DEFAULT_PROPENSITY_CORRECTION = "projected"
DEFAULT_GRAM_RIDGE = 1e-10
DEFAULT_CHUNK_COLUMNS = 512
BOOTSTRAP_CHUNK = 100

# multiplier laws

MAMMEN_KAPPA = (math.sqrt(5.0) + 1.0) / 2.0
MAMMEN_P_LOW = MAMMEN_KAPPA / math.sqrt(5.0)

# Monte Carlo designs

DESIGN_IDS = ("i", "ii", "iii")
CENSOR_PCTS = (0, 10, 30)
DEFAULT_CALIBRATION_DRAWS = 1_000_000
DEFAULT_CALIBRATION_SEED = 20_200_101
DEFAULT_CALIBRATION_TOLERANCE = 0.005
CALIBRATION_BRACKET = (-15.0, 25.0)
CENSOR_SCALE_B = 1.0

REPORT_SCHEMA_VERSION = "1.0"

PROCESS_KINDS = ("dte", "cate", "hom", "ldte")
STATISTIC_TYPES = ("ks", "cvm")
