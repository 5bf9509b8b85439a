"""Storage-ring orbit-feedback workbench.

Simulated ring with ORM drift and BPM noise, a spectral (SVD/ridge)
controller, a supervised neural policy and a model-based policy trained
by differentiating through surrogate rollouts with online refits.
"""

from ._accel import backend
from .controllers import PolicyController, ReplayBuffer, SvdController, policy_controller_action, svd_controller_action
from .env import EnvConfig, RingEnv, generate_orm, perturb_orm
from .linalg import SvdResult, fit_response_lstsq, ridge_solve, svd
from .neural import POLICY_DIMS, AdamState, GradTape, MlpParams, adam_step, backward, forward, mlp_init
from .trajectory import TrajectoryLog, TransitionSet, rms

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "EnvConfig",
    "GradTape",
    "MlpParams",
    "POLICY_DIMS",
    "PolicyController",
    "ReplayBuffer",
    "RingEnv",
    "SvdController",
    "SvdResult",
    "TrajectoryLog",
    "TransitionSet",
    "adam_step",
    "backend",
    "backward",
    "fit_response_lstsq",
    "forward",
    "generate_orm",
    "mlp_init",
    "perturb_orm",
    "policy_controller_action",
    "ridge_solve",
    "rms",
    "svd",
    "svd_controller_action",
]
