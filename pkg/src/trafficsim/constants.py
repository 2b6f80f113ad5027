"""Model constants shared by the decision rules and the step kernels.

Values that are tunable per scenario live in EngineConfig / GridParams instead.
"""

# spatial index
SEGMENT_LENGTH = 10.0  # m, default lane segment size

# intersection arbitration
NOTIFY_RADIUS = 50.0   # m before the stop line at which vehicles start claiming cross points
YIELD_BUFFER = 3.0     # m of enforcement margin outside the geometric conflict window
SIN_FLOOR = 0.2        # lower bound on sin(crossing angle) so merge clearances stay finite
V_MIN_EST = 1.0        # m/s floor for arrival-time estimates
CREEP_AFTER = 30.0     # s blocked inside an intersection before the creep escape engages
CREEP_SPEED = 2.0      # m/s allowed while creeping

# signals
YELLOW_TIME = 3.0      # s, default transition window when a phase switch is commanded

# lane changing
LC_DURATION = 2.0      # s of coupled movement before the shadow replaces the original
LC_COOLDOWN = 5.0      # s between consecutive changes per vehicle
GAIN_THRESHOLD = 10.0  # m of extra leader gap required by the speed-gain rule

# car following
WAITING_SPEED = 0.1    # m/s below which a vehicle counts as waiting
SIBLING_CLEAR = 5.0    # m a diverging vehicle must advance past the stop line before
                       # same-source-lane followers stop treating it as their leader

# engine
MAX_BOUNDARY_CARRIES = 2  # residual distance may cross at most this many boundaries per step
