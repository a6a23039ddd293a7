"""Bayesian tensor completion of model-by-dataset-by-metric score tables."""
__version__ = "0.1.0"

from .active import ActiveConfig, ActiveCurve, run_active
from .inference import FitResult, fit, fit_grouped, fit_separate
from .kernels import BACKEND
from .models import VARIANTS, FactorModel, LatentState, ModelSpec
from .predict import evaluate, global_mean_baseline, mean_of_means_baseline, predict
from .profiles import ProfileSet, load_profiles
from .sampler import PosteriorSamples, SamplerConfig, nuts_sample
from .synth import generate
from .tensor import DataError, Normalizer, ScoreTensor, load_scores, split_mask

__all__ = [
    "ActiveConfig", "ActiveCurve", "BACKEND", "DataError", "FactorModel", "FitResult",
    "LatentState", "ModelSpec", "Normalizer", "PosteriorSamples", "ProfileSet", "SamplerConfig",
    "ScoreTensor", "VARIANTS", "evaluate", "fit", "fit_grouped", "fit_separate", "generate",
    "global_mean_baseline", "load_profiles", "load_scores", "mean_of_means_baseline",
    "nuts_sample", "predict", "run_active", "split_mask",
]
