from enum import Enum


class Strategy(Enum):
    """Riccati strategy used inside the receding-horizon loop."""
    DIRECT = "direct"
    OFFLINE_ONLINE = "offline_online"
    CASCADE_NK = "cascade_nk"
    HYBRID = "hybrid"


class Scheme(Enum):
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"
    RK4 = "rk4"


# Newton-Kleinman stopping rule (Frobenius residual).
NK_TOL = 1e-5
NK_MAX_ITER = 50

CARE_RTOL = 1e-9
LYAPUNOV_RTOL = 1e-10
NEAR_DEFECTIVE_COND = 1e12

# State norm above which a trajectory is truncated and reported as diverged.
DIVERGENCE_THRESHOLD = 1e8

CSV_DIGITS = 17
OUTPUT_DIR_ENV = "SDRE_OUTPUT_DIR"
