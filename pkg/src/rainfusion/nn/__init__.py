"""Dense numerical layer stack for the 3D U-Net forecasters.

Activations are rank-5 arrays laid out (batch, time, rows, cols, channels);
float32 is the training precision, float64 the gradient-check precision.
Every layer implements an exact adjoint: `forward(x)` caches what its
`backward(grad)` needs, and parameter gradients accumulate on the layer's
Parameter blocks until `zero_grad`.
"""

from .layers import Conv3d, MaxPool3d, Parameter, ReLU, Upsample3d, ensure_array5
from .losses import logcosh_loss, mse_loss
from .adam import Adam, lr_for_epoch
from .gradcheck import gradient_check
from .checkpoint import load_arrays, save_arrays

__all__ = [
    "Adam",
    "Conv3d",
    "MaxPool3d",
    "Parameter",
    "ReLU",
    "Upsample3d",
    "ensure_array5",
    "gradient_check",
    "load_arrays",
    "logcosh_loss",
    "lr_for_epoch",
    "mse_loss",
    "save_arrays",
]
