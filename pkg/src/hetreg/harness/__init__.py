"""Training loop, grid search, presets and result emission."""
from .config import TrainConfig, load_config
from .train import TrainResult, train_run
