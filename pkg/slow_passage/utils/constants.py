# constants.py

# Event detection
EVENT_XTOL = 1e-12
MAX_SAMPLE_STEP = 0.01
EVENT_BUDGET = 1_000_000
SCAN_CHUNK = 4096

# Structural tolerances
CONTINUITY_TOL = 1e-12
ADMISSIBILITY_MARGIN = 1e-12
STABILITY_BOUNDARY_TOL = 1e-12
REPEATED_ROOT_TOL = 1e-10
# Discriminant relative to its two cancelling terms; a double root sits at rounding level
REPEATED_DISC_TOL = 1e-12
BOUNDARY_TOL = 1e-10

# Connection solvers
CONNECTION_TOL = 1e-10
VERIFICATION_TOL = 1e-8
SHOOTING_TOL = 1e-9
NEWTON_MAX_ITER = 50

# Way-in/way-out
DEFAULT_DELTA = 1.0
PLATEAU_FLATNESS = 1e-3
TIME_BUDGET_FACTOR = 10.0

# Classic DK parameters
DK_A = 0.8
DK_ETA = 0.5
DK_B = 0.5

# Output
FLOAT_FORMAT = ".17g"
