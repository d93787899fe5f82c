"""H-FNO channel estimator."""
from fimce.neural.checkpoint import load_checkpoint, save_checkpoint
from fimce.neural.model import (
    FnoConfig,
    HFNO,
    ModeBoundError,
    avg_pool,
    build_input_features,
    export_spectral_weights,
    fourier_layer,
    spectral_conv,
    upsample_linear,
)
from fimce.neural.train import ChannelDataset, TrainConfig, TrainLog, fine_tune, loss_gradients, mse_loss, train
