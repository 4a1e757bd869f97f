from .arch import (
    FRN,
    ArchSpec,
    Dense,
    Network,
    ReLU,
    ResidualBlock,
    fingerprint,
    init_params,
    mlp_arch,
)
from .flops import FlopsReport, count_flops, sum_reports
from .functional import ForwardResult, backward, features, forward, log_softmax, softmax
from .losses import cross_entropy, kl_loss
from .optim import DivergenceError, OptimizerCfg, cosine_lr, minibatches, sgd_step, train_network

__all__ = [
    "ArchSpec", "Dense", "ReLU", "FRN", "ResidualBlock", "Network", "fingerprint",
    "init_params", "mlp_arch", "FlopsReport", "count_flops", "sum_reports",
    "ForwardResult", "forward", "backward", "features", "softmax", "log_softmax",
    "cross_entropy", "kl_loss", "OptimizerCfg", "DivergenceError", "sgd_step",
    "cosine_lr", "minibatches", "train_network",
]
