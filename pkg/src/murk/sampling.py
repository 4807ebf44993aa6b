"""Two-phase ray sampling: object-driven importance samples plus
reverse-stratified media upsampling.

Object-centric sampling alone leaves the space between camera and surface
almost unsampled, which lets the medium field collapse onto the object
during decomposition. The second phase assigns each inter-sample interval a
reverse weight

    w_i = delta_i * (max_j sigma_hat_j - sigma_hat_i) + epsilon,

builds a CDF over intervals, and places stratified media samples by CDF
inversion, so low-density gaps are covered near-uniformly.

All randomness flows through counter-based Philox generators keyed by
(seed, iteration, ray id); identical keys reproduce samples bit-for-bit.
Densities are always queried detached: no gradient flows through sample
positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError
from .scene import Phase, Ray, SampleSet, sort_merge

EPSILON_FLOOR = 1e-5   # reverse-weight floor; breaks ties, never dominates
N_OBJ_DEFAULT = 64
N_ADD_DEFAULT = 32

_WEIGHT_FLOOR = 1e-12  # flat fallback so empty fields keep a valid CDF


def make_rng(seed, iteration=0, ray_id=0) -> np.random.Generator:
    """Counter-based generator for one (seed, iteration, ray) stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(iteration), int(ray_id)))))


@dataclass(frozen=True)
class ReverseWeights:
    """Per-interval reverse weights over a sample set's interior intervals."""

    w_med: np.ndarray      # (m,), all >= epsilon
    sigma_hat: np.ndarray  # (m,), interval-mean object densities
    epsilon: float
    edges: np.ndarray      # (m + 1,), interval boundaries
    t_near: float
    t_far: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InputError("epsilon must be positive")
        if np.any(self.w_med < self.epsilon - 1e-300):
            raise InputError("reverse weights must be >= epsilon")


def reverse_weights(samples: SampleSet, sigma_hat, epsilon=EPSILON_FLOOR) -> ReverseWeights:
    """Reverse weights w_i = delta_i * (max sigma_hat - sigma_hat_i) + epsilon."""
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    if len(samples) < 2 or sigma_hat.shape != samples.deltas.shape:
        raise InputError("need one interval-mean density per interior interval")
    w = samples.deltas * (sigma_hat.max() - sigma_hat) + epsilon
    return ReverseWeights(w, sigma_hat, float(epsilon), samples.positions.copy(),
                          samples.t_near, samples.t_far)


def _invert_cdf(weights, u, rng):
    """Interval indices for stratified variates u via F(i-1) < u <= F(i)."""
    cdf = np.cumsum(weights, axis=-1)
    if np.any(cdf[..., -1] <= 0):
        raise InputError("degenerate CDF: weights sum to zero")
    cdf = cdf / cdf[..., -1:]
    # count of cdf entries < u == first index with cdf >= u
    idx = np.sum(cdf[..., None, :] < u[..., :, None], axis=-1)
    return np.minimum(idx, weights.shape[-1] - 1)


def _stratified_u(n, rng, batch=None):
    shape = (n,) if batch is None else (batch, n)
    return (np.arange(n) + rng.random(shape)) / n


def stratified_invert(weights: ReverseWeights, n_add, rng) -> SampleSet:
    """Place n_add media samples by stratified inversion of the interval CDF.

    Each u_j is drawn from stratum ((j-1)/n_add, j/n_add]; the selected
    interval gets a uniform draw between its endpoints.
    """
    if n_add < 1:
        raise InputError("n_add must be >= 1")
    u = _stratified_u(int(n_add), rng)
    idx = _invert_cdf(weights.w_med, u, rng)
    lo, hi = weights.edges[idx], weights.edges[idx + 1]
    t = lo + rng.random(int(n_add)) * (hi - lo)
    return SampleSet(t, np.full(int(n_add), Phase.MEDIA), weights.t_near, weights.t_far)


def object_samples(ray: Ray, fieldset, n_obj=N_OBJ_DEFAULT, rng=None) -> SampleSet:
    """Object-phase samples: stratified-uniform probes, one importance refinement.

    The coarse probes only estimate per-stratum rendering weights; the
    returned set is the stratified inversion of that weight CDF. A zero
    density field therefore degenerates to stratified-uniform sampling.
    """
    if n_obj < 2:
        raise InputError("n_obj must be >= 2")
    rng = rng if rng is not None else make_rng(0)
    edges = np.linspace(ray.t_near, ray.t_far, n_obj + 1)
    h = edges[1:] - edges[:-1]
    probes = edges[:-1] + rng.random(n_obj) * h
    with torch.no_grad():
        sigma = fieldset.object_density.query(torch.from_numpy(ray.at(probes))).squeeze(-1).numpy()
    w = _render_weights(sigma, h)
    u = _stratified_u(n_obj, rng)
    idx = _invert_cdf(w, u, rng)
    t = edges[idx] + rng.random(n_obj) * h[idx]
    return SampleSet(t, np.full(n_obj, Phase.OBJECT), ray.t_near, ray.t_far)


def _render_weights(sigma, delta):
    """NeRF-style quadrature weights with a flat floor for the empty-field fallback."""
    tau = sigma * delta
    trans = np.exp(-np.concatenate([np.zeros_like(tau[..., :1]), np.cumsum(tau, axis=-1)[..., :-1]], axis=-1))
    w = trans * (1.0 - np.exp(-tau))
    return w + _WEIGHT_FLOOR


def interval_mean_density(samples: SampleSet, sigma_at_samples) -> np.ndarray:
    """Trapezoid estimate of each interior interval's mean object density."""
    s = np.asarray(sigma_at_samples, dtype=np.float64)
    if s.shape != samples.positions.shape:
        raise InputError("need one density per sample position")
    return 0.5 * (s[:-1] + s[1:])


def sample_ray(ray: Ray, fieldset, n_obj=N_OBJ_DEFAULT, n_add=N_ADD_DEFAULT, rng=None) -> SampleSet:
    """Full upsampled position set: object samples merged with reverse-stratified media samples."""
    rng = rng if rng is not None else make_rng(0)
    obj = object_samples(ray, fieldset, n_obj, rng)
    with torch.no_grad():
        sigma = fieldset.object_density.query(torch.from_numpy(ray.at(obj.positions))).squeeze(-1).numpy()
    rw = reverse_weights(obj, interval_mean_density(obj, sigma))
    med = stratified_invert(rw, n_add, rng)
    return sort_merge(obj, med)


def sample_batch(origins, directions, t_near, t_far, fieldset,
                 n_obj=N_OBJ_DEFAULT, n_add=N_ADD_DEFAULT, seed=0, iteration=0):
    """Vectorized sample_ray over a ray batch.

    Returns (positions (R, n_obj + n_add), phase (R, n_obj + n_add)) as numpy
    arrays sorted along each ray. One Philox stream keyed by (seed,
    iteration) drives the whole batch; row r is a pure function of
    (seed, iteration, r).
    """
    rng = make_rng(seed, iteration, ray_id=0)
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    near = np.asarray(t_near, dtype=np.float64)[:, None]
    far = np.asarray(t_far, dtype=np.float64)[:, None]
    r = origins.shape[0]

    frac = np.linspace(0.0, 1.0, n_obj + 1)[None, :]
    edges = near + (far - near) * frac                      # (R, n_obj + 1)
    h = edges[:, 1:] - edges[:, :-1]
    probes = edges[:, :-1] + rng.random((r, n_obj)) * h
    sigma_probe = _query_density(fieldset, origins, directions, probes)
    w = _render_weights(sigma_probe, h)
    u = _stratified_u(n_obj, rng, batch=r)
    idx = _invert_cdf(w, u, rng)
    t_obj = np.take_along_axis(edges, idx, axis=1) + rng.random((r, n_obj)) * np.take_along_axis(h, idx, axis=1)
    t_obj.sort(axis=1)

    sigma_obj = _query_density(fieldset, origins, directions, t_obj)
    sig_hat = 0.5 * (sigma_obj[:, :-1] + sigma_obj[:, 1:])
    deltas = t_obj[:, 1:] - t_obj[:, :-1]
    w_med = deltas * (sig_hat.max(axis=1, keepdims=True) - sig_hat) + EPSILON_FLOOR
    u_med = _stratified_u(n_add, rng, batch=r)
    idx_med = _invert_cdf(w_med, u_med, rng)
    lo = np.take_along_axis(t_obj, idx_med, axis=1)
    hi = np.take_along_axis(t_obj, idx_med + 1, axis=1)
    t_med = lo + rng.random((r, n_add)) * (hi - lo)

    positions = np.concatenate([t_obj, t_med], axis=1)
    phase = np.concatenate([np.full((r, n_obj), Phase.OBJECT, dtype=np.int8),
                            np.full((r, n_add), Phase.MEDIA, dtype=np.int8)], axis=1)
    order = np.argsort(positions, axis=1, kind="stable")
    return np.take_along_axis(positions, order, axis=1), np.take_along_axis(phase, order, axis=1)


def _query_density(fieldset, origins, directions, t):
    pts = origins[:, None, :] + t[..., None] * directions[:, None, :]
    with torch.no_grad():
        return fieldset.object_density.query(torch.from_numpy(pts)).squeeze(-1).numpy()
