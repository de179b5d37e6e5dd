# Scene sampling
DEFAULT_SAMPLE_COUNT = 2000

# Numerical thresholds
DEGENERATE_EPS = 1e-9
RMAX_TIE_EPS = 1e-12
LIMIT_EPS = 1e-12

# Trajectory synthesis
DEFAULT_K = 20
GOAL_MARGIN = 0.1  # fraction of the joint range added beyond the remaining travel

# Rollout policy
DEFAULT_H = 7
DEFAULT_MAX_STEPS = 100
SUCCESS_DELTA = 0.1
GOAL_TOLERANCE = 1e-6
STALL_DQ = 1e-8
STALL_PATIENCE = 3
PROFILE_STEPS = 20

# Heuristic classifier
PRISMATIC_SIMILARITY = 0.99

# Reference occlusion model: dropout grows as the part opens
REFERENCE_BASE_DROPOUT = 0.1
REFERENCE_OPENING_DROPOUT = 0.6

# Upper bound on the per-prediction projection shrinkage
MAX_PROJ_SHRINK = 0.95

# Named predictor noise presets, seeds are filled in per trial
NOISE_PRESETS = {
    "exact": None,
    "bias10": {"proj_bias_deg": 10.0},
    "stochastic": {"flow_sigma": 0.05, "proj_sigma": 0.05, "proj_bias_deg": 10.0},
    "reference": {
        "flow_sigma": 0.1,
        "proj_sigma": 0.05,
        "proj_bias_deg": 10.0,
        "proj_shrink_sigma": 0.6,
        "occlusion_flip_gain": 0.8,
    },
}

# File formats
FIELDS_HEADER = ["idx", "x", "y", "z", "fx", "fy", "fz", "rx", "ry", "rz", "mask"]
TRAJECTORY_HEADER = ["step", "x", "y", "z", "qw", "qx", "qy", "qz"]
METRICS_HEADER = [
    "scene", "policy", "H", "use_gs", "use_mask", "noise_preset", "trial", "seed",
    "norm_dist", "success", "steps", "replans", "dq_var", "wall_ms",
]
TRACE_HEADER = ["step", "q", "dq", "contact_x", "contact_y", "contact_z"]
FLOAT_FORMAT = "%.17g"

