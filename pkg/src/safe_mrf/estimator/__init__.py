"""Convolutional B1/B0 field estimator with hand-written backpropagation."""
from .network import (Network, NetworkConfig, count_params, forward_pass, init_network,
                      receptive_field)
from .training import (OUTPUTS, NormalizationSpec, TrainConfig, loss_and_grad, predict_fields,
                       train)

__all__ = [
    "Network", "NetworkConfig", "NormalizationSpec", "OUTPUTS", "TrainConfig", "count_params",
    "forward_pass", "init_network", "loss_and_grad", "predict_fields", "receptive_field", "train",
]
