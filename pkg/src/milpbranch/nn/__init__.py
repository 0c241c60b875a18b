from .autodiff import Tensor, no_grad
from .model import ModelConfig, PolicyModel, GraphBatch, candidate_probs, loss_and_grad, pick
from .optim import AdamState, PlateauState, adam_step, plateau_schedule

__all__ = [
    "AdamState", "GraphBatch", "ModelConfig", "PlateauState", "PolicyModel", "Tensor",
    "adam_step", "candidate_probs", "loss_and_grad", "no_grad", "pick", "plateau_schedule",
]
