from .layers import (AvgPool, BatchNorm, ConfigError, Conv, FC, Flatten, GradReversal,
                     LinearHead, MaxPool, NumericError, ReLU, SoftmaxHead, avgpool_backward,
                     avgpool_forward, batchnorm_backward, batchnorm_forward, conv_backward,
                     conv_forward, fc_backward, fc_forward, grad_reversal_backward,
                     grad_reversal_forward, layer_from_config, maxpool_backward, maxpool_forward,
                     param_count, relu_backward, relu_forward, softmax)
from .losses import LossReport
from .network import Network, train_epoch, train_step
from .optim import Adam, AdamState, SGD, adam_step, cosine_lr, sgd_step
from .gradcheck import gradient_check
