from ._core import (
    BaselineFailure,
    compose,
    compose_window,
    cosine_schedule,
    ddim_timesteps,
    eight_point,
    exp,
    extract_actions,
    geodesic_angle,
    illum_change_score,
    inverse,
    log,
    parse_run_config,
    quartile_bins,
    random_pose,
    render,
    rpe,
    se3_exp,
    se3_log,
    texture_score,
    umeyama,
    window_starts,
)

__all__ = [
    "BaselineFailure",
    "compose",
    "compose_window",
    "cosine_schedule",
    "ddim_timesteps",
    "eight_point",
    "exp",
    "extract_actions",
    "geodesic_angle",
    "illum_change_score",
    "inverse",
    "log",
    "parse_run_config",
    "quartile_bins",
    "random_pose",
    "render",
    "rpe",
    "se3_exp",
    "se3_log",
    "texture_score",
    "umeyama",
    "window_starts",
]
