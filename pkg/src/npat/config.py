"""Process-wide constants: numerical defaults, file-format identity, CSV layouts, exit codes.

Everything a run needs that is not part of its RunConfig lives here so the
manifest can echo the exact values a result was produced with."""
from __future__ import annotations

APP_NAME = "npat"
APP_VERSION = "0.3"                    # bump before tagging a release

# ---- solver
CFL_DEFAULT = 0.45                     # below the 2D leapfrog limit 1/sqrt(2)
CFL_MAX = 0.5
ENERGY_MONITOR_RTOL = 1e-12            # allowed per-step growth, relative to E(t0)
VELOCITY_MAP_TOL = 1e-16             # truncation of the level <-> state velocity series

# ---- boundary cutoff
CHI0_RAMP_FRACTION = 0.2               # ramp width per free end, as a fraction of |Gamma|
SPACING_RTOL = 1e-9                    # h must tile arm_length to this tolerance

# ---- projection
CG_RTOL = 1e-10
CG_MAXITER_FACTOR = 10                 # maxiter = factor * |K|

# ---- region construction
REGION_DILATION = 2                    # nodes
REGION_MIN_MARGIN = 2                  # nodes between K and any boundary node

# ---- rays
TANGENCY_THRESHOLD = 0.05              # |cos(incidence)| below this is grazing
N_DIRS_DEFAULT = 64
RAY_STEP_SAFETY = 0.5
RAY_BISECT_TOL = 1e-3                  # in units of h
RAY_CONSERVATION_TOL = 1e-6

# ---- iteration
STOP_RATIO_DEFAULT = 1e-12             # stop when update <= ratio * first update

# ---- FieldFile
FIELD_MAGIC = b"NPAT"
FIELD_VERSION = 1
KIND_FIELD = 0
KIND_TRACE = 1
KIND_MASK = 2
DTYPE_F64LE = 1

# ---- CSV layouts
LOG_HEADER = ("iter", "error", "update", "rate", "seconds")
VC_HEADER = ("x", "y", "dir_index", "outcome", "hit_time", "cos_incidence")
AUDIT_HEADER = ("step", "time", "energy", "flux", "residual")

PGM_MAXVAL = 65535

# ---- exit codes
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_GEOMETRY = 3

