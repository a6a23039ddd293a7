"""Fit a factor model to a score tensor: normalize, initialise, run NUTS."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import FactorModel, ModelSpec, init_state, unpack_state
from .profiles import ProfileSet
from .sampler import PosteriorSamples, SamplerConfig, nuts_sample
from .tensor import Normalizer, ScoreTensor, fit_normalizer, normalized_values


@dataclass
class FitResult:
    spec: ModelSpec
    sampler: SamplerConfig
    model: FactorModel
    normalizer: Normalizer
    samples: PosteriorSamples
    profiles: ProfileSet | None = None

    def states(self):
        return [unpack_state(v, self.model.layout) for v in self.samples.draws]

    def normalized_draws(self) -> np.ndarray:
        """Reconstructions of every draw, shape (n_draws, M, N, S), normalized scale."""
        return np.stack([self.model.reconstruct(v) for v in self.samples.draws])


def build_model(tensor: ScoreTensor, train, spec: ModelSpec,
                profiles: ProfileSet | None = None, normalizer: Normalizer | None = None):
    norm = normalizer if normalizer is not None else fit_normalizer(tensor, train)
    Z = normalized_values(tensor, norm)
    H = G = None
    if spec.constrained:
        if profiles is None:
            raise ValueError(f"{spec.variant} needs profiles")
        H, G = profiles.H, profiles.G
    return FactorModel(spec, Z, train, H, G), norm


def fit(tensor: ScoreTensor, train, spec: ModelSpec, cfg: SamplerConfig,
        profiles: ProfileSet | None = None) -> FitResult:
    """Posterior samples of ``spec`` given the ``train`` cells of ``tensor``.

    Data are z-scored per metric on the training cells; the chain starts from
    ``init_state(seed=cfg.seed)``.
    """
    train = np.asarray(train, dtype=bool)
    model, norm = build_model(tensor, train, spec, profiles)
    init = init_state(spec, model.layout, cfg.seed)
    samples = nuts_sample(model.log_joint_and_grad, init, cfg)
    return FitResult(spec, cfg, model, norm, samples, profiles)


def fit_separate(tensor: ScoreTensor, train, spec: ModelSpec, cfg: SamplerConfig) -> list[FitResult]:
    """One independent fit per metric slice (each with its own noise scale)."""
    train = np.asarray(train, dtype=bool)
    return [fit(tensor.metric_slice(s), train[:, :, s:s + 1], spec, cfg)
            for s in range(tensor.shape[2])]


def fit_grouped(tensor: ScoreTensor, train, groups, spec: ModelSpec, cfg: SamplerConfig):
    """Fit PMF once per metric group, sharing one latent matrix across the group.

    Under PMF every metric of a group receives the same normalized prediction,
    so datasets carrying different metrics of the group end up in one matrix.
    Returns ``[(metric_indices, FitResult), ...]``.
    """
    if spec.variant != "PMF":
        raise ValueError("grouped fitting is defined for PMF only")
    train = np.asarray(train, dtype=bool)
    out = []
    for group in groups:
        idx = [tensor.metric_ids.index(g) if isinstance(g, str) else int(g) for g in group]
        sub = ScoreTensor(tensor.model_ids, tensor.dataset_ids, [tensor.metric_ids[i] for i in idx],
                          tensor.values[:, :, idx], tensor.observed[:, :, idx], tensor.valid[:, idx])
        out.append((idx, fit(sub, train[:, :, idx], spec, cfg)))
    return out
