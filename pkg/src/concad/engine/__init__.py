from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_parameters, grad_check, numeric_gradient, relative_error
from .init import RngStream, he_normal_init
from .ops import (
    NumericError,
    batchnorm1d_backward,
    batchnorm1d_forward,
    check_finite,
    conv1d,
    conv1d_backward,
    conv1d_forward,
    conv_output_length,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    l2_normalize,
    l2_normalize_backward,
    l2_normalize_forward,
    maxpool1d_backward,
    maxpool1d_forward,
    relu,
    relu_backward,
    relu_forward,
    softmax,
    softmax_backward,
)
from .optim import AMSGrad, Parameter, amsgrad_step
