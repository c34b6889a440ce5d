"""Health indicators from guided-wave signals.

Signal processing and feature extraction, prognostic criteria, two
semi-supervised HI models (Diversity-DeepSAD and DTC-VAE), fitness-weighted
fusion across excitation frequencies, and Bayesian hyperparameter search.
"""

from .criteria import CriteriaReport, evaluate, fitness
from .datamodel import HICurve, build_folds
from .ensemble import seed_average, wae_fuse
from .synth import SynthSpec, SyntheticDataset, generate

__all__ = [
    "CriteriaReport",
    "HICurve",
    "SynthSpec",
    "SyntheticDataset",
    "build_folds",
    "evaluate",
    "fitness",
    "generate",
    "seed_average",
    "wae_fuse",
]
__version__ = "0.1.0"
