"""
Configuration settings for the Cahn-Hilliard control toolkit.
"""

import os
from dotenv import load_dotenv

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
load_dotenv(os.path.join(PROJECT_ROOT, '.env'))

OUTPUT_DIR = os.getenv('CHOPT_OUTPUT_DIR', os.path.join(PROJECT_ROOT, 'outputs'))
LOG_LEVEL = os.getenv('CHOPT_LOG_LEVEL', 'INFO')
THREADS = int(os.getenv('CHOPT_THREADS', '1'))

# Cahn-Hilliard model
MOBILITY = 2.5e-5
SIGMA = 25.98
EPSILON = 0.02
DT = 2.5e-5
END_TIME = 0.0125

# Newton on the coupled (phi, mu) system
NEWTON_ATOL = 1e-10
NEWTON_RTOL = 1e-12
NEWTON_MAX_ITER = 30
ROM_NEWTON_ATOL = 1e-12

# Cost functional
BETA1 = 20.0
BETA2 = 20.0
GAMMA = 1e-4

# Admissible controls (CFL-driven)
U_A = 0.0
U_B = 50.0
CONTROL_SHAPES = ["sin_cos_vortex"]

# Mesh adaptation
ROOT_LEVEL = 5
MAX_LEVEL = 8
ADAPT_CADENCE = 10
FRAC_REFINE = 0.3
FRAC_COARSEN = 0.05
H_MIN_GUARD = 0.00177
INTERFACE_THRESHOLD = 0.9
INTERFACE_FLAG_WEIGHT = 1.0
INITIAL_ADAPT_PASSES = 3

# Projected gradient / Armijo
K_MAX = 50
ARMIJO_S_INIT = 1.0
ARMIJO_SHRINK = 0.25
ARMIJO_C = 1e-4
ARMIJO_MAX_BACKTRACKS = 25
STOP_REL_TOL = 0.01
STOP_ABS_TOL = 0.01

# POD / DEIM
POD_ELL = 20
POD_RANK_TOL = 1e-14
SNAPSHOT_SOURCE = "desired"

# Target synthesis
U_DESIRED = 30.0
CROSS_ARM_HALF_LENGTH = 0.3
CROSS_ARM_HALF_WIDTH = 0.1

CFL_POLICY = "warn"
VTK_STRIDE = 50
SEED = 1234
TIMING_REPEATS = 3
