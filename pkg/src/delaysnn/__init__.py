"""Spiking networks whose neurons carry a shift-register delay state, trained
with surrogate-gradient BPTT."""
from .core import RngStream, finite_diff_grad, matvec
from .data import SyntheticSpec, gen_synthetic, load_dataset, read_interchange, write_interchange
from .network import Model, Network, NetworkSpec, LayerSpec, count_params, count_state_memory
from .neuron import DelayScheme, NeuronParams, Scheme, adlif_step, build_asd, delay_step, generic_step, lif_step
from .training import TrainConfig, evaluate, fit, gradient_check

__version__ = "0.1.0"

__all__ = [
    "RngStream", "finite_diff_grad", "matvec",
    "SyntheticSpec", "gen_synthetic", "load_dataset", "read_interchange", "write_interchange",
    "Model", "Network", "NetworkSpec", "LayerSpec", "count_params", "count_state_memory",
    "DelayScheme", "NeuronParams", "Scheme", "adlif_step", "build_asd", "delay_step", "generic_step", "lif_step",
    "TrainConfig", "evaluate", "fit", "gradient_check",
]
