from attnvo.training.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from attnvo.training.config import TrainConfig
from attnvo.training.loop import EpochRecord, TrainResult, TrainingDivergedError, train
from attnvo.training.loss import loss_mse, loss_mse_grad, per_segment_loss
from attnvo.training.optim import OptimizerState, adagrad_step
