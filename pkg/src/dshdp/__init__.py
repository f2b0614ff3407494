"""Disentangled sticky HDP-HMM: direct-assignment and weak-limit Gibbs samplers."""
from .core import GlobalWeights, HyperParams, HyperPriors, RhoGrid, StickyGrid, Variant
from .data import Dataset
from .direct import DirectSampler
from .emissions import ARGaussian, GaussianKnownVar, Multinomial, PoissonVector
from .evaluation import HMMParams, forward_loglik, hamming_distance, hungarian_min_cost, predictive_nll
from .weaklimit import WeakLimitSampler

__all__ = ["ARGaussian", "Dataset", "DirectSampler", "GaussianKnownVar", "GlobalWeights",
           "HMMParams", "HyperParams", "HyperPriors", "Multinomial", "PoissonVector", "RhoGrid",
           "StickyGrid", "Variant", "WeakLimitSampler", "forward_loglik", "hamming_distance",
           "hungarian_min_cost", "predictive_nll"]
__version__ = "0.1.0"
