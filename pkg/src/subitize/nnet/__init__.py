"""SubitNet: a small convolutional count classifier trained from scratch."""
from .model import (ModelState, SubitNetSpec, backward, features, forward, init_state,
                    load_checkpoint, save_checkpoint, sgd_momentum_step)
from .training import (ImageSet, TrainConfig, load_image_set, predict, predict_batch, train,
                    two_stage_finetune)
from .gradcheck import gradient_check

__all__ = [
    "ModelState", "SubitNetSpec", "backward", "features", "forward", "init_state",
    "load_checkpoint", "save_checkpoint", "sgd_momentum_step", "ImageSet", "TrainConfig",
    "load_image_set", "predict", "predict_batch", "train", "two_stage_finetune", "gradient_check",
]
