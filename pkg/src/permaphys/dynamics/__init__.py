"""Recurrent interaction dynamics, baselines, and training."""

from .model import (
    POS,
    STATE_DIM,
    TAU,
    VEL,
    DynamicsConfig,
    RecIntNet,
    StateScaler,
    init_params,
    mse_loss,
    nll_loss,
    predict,
    state_row,
    step,
)
from .baselines import MAX_SLOTS, MLPBaseline, init_mlp_params, linear_rollout
from .train import (
    DynamicsTrainConfig,
    VideoStates,
    seed_states,
    sequence_loss,
    train_dynamics,
    video_state_array,
)
