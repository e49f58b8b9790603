from .gradcheck import check_model_gradients, max_relative_error, numerical_gradients
from .layers import DenseLayer, LstmLayer
from .models import DenseRegressor, Seq2SeqAutoencoder
from .optim import AdamState, adam_step
from .train import TrainingError, mse, train

__all__ = [
    "AdamState",
    "DenseLayer",
    "DenseRegressor",
    "LstmLayer",
    "Seq2SeqAutoencoder",
    "TrainingError",
    "adam_step",
    "check_model_gradients",
    "max_relative_error",
    "mse",
    "numerical_gradients",
    "train",
]
