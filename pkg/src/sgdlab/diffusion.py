"""Gradient-noise covariance: analytic evaluation and Monte Carlo estimate.

The noise vector of one update is

    xi(x) = grad f(x) - alpha * grad f_B(x)

with alpha uniform on [1 - delta, 1 + delta] and B a random mini-batch of
size C.  Since E[alpha] = 1 and E[grad f_B] = grad f, the noise is
zero-mean by construction and its covariance splits into a same-sample
part and a cross-sample remainder:

    Sigma(x) = (1/C) * Dhat(x) + d_offdiag(x)
    Dhat(x)  = m2 * (1/N) sum_j g_j g_j^T - g g^T

where g_j are per-sample gradients, g their mean, and m2 = E[alpha^2].
The exact second moment of the uniform multiplier is 1 + delta**2 / 3;
a compatibility mode uses 1 + delta / 3 instead (the two coincide at
delta = 0 and delta = 1).  The isotropic reduction D = trace(Dhat) / n is
the Frobenius-closest multiple of the identity.

Two batch conventions are supported for the cross-sample term: averaging
over a fixed contiguous partition of the dataset into N/C batches, or
enumerating every C-subset (the brute-force oracle convention, which is
also what the Monte Carlo estimator samples from).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from math import comb

import numpy as np

from .errors import CapacityError, ConfigError, MisuseError
from .objectives import Objective

MAX_ENUMERATED_BATCHES = 2_000_000


class MomentMode(str, Enum):
    EXACT = "exact"               # E[alpha^2] = 1 + delta^2 / 3
    LINEAR_DELTA = "linear-delta"  # 1 + delta / 3; equal to EXACT at delta in {0, 1}


class BatchScheme(str, Enum):
    FIXED_PARTITION = "fixed-partition"
    SUBSET_ENUMERATION = "subset-enumeration"


def alpha_second_moment(delta: float, mode: MomentMode = MomentMode.EXACT) -> float:
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"delta must lie in [0, 1], got {delta}")
    if mode is MomentMode.EXACT:
        return 1.0 + delta * delta / 3.0
    return 1.0 + delta / 3.0


@dataclass
class DiffusionReport:
    """Analytic covariance pieces at one point in weight space."""

    sigma: np.ndarray        # full covariance of xi
    dhat: np.ndarray         # same-sample (diagonal-in-sample-index) part
    d_offdiag: np.ndarray    # cross-sample remainder
    d_scalar: float          # trace(dhat) / n
    moment_mode: MomentMode
    batch_scheme: BatchScheme
    delta: float
    batch_size: int


def noise_sample(obj: Objective, x: np.ndarray, delta: float, batch_size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """One draw of xi = grad f(x) - alpha * grad f_B(x)."""
    if batch_size < 1 or batch_size > obj.sample_count:
        raise MisuseError(f"batch_size {batch_size} out of range "
                          f"[1, {obj.sample_count}]")
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"delta must lie in [0, 1], got {delta}")
    batch = rng.choice(obj.sample_count, size=batch_size, replace=False)
    alpha = rng.uniform(1.0 - delta, 1.0 + delta)
    return obj.grad(x) - alpha * obj.batch_grad(x, batch)


def _partition_batches(sample_count: int, batch_size: int):
    if sample_count % batch_size != 0:
        raise ConfigError(f"fixed partition needs batch_size | N "
                          f"({batch_size} does not divide {sample_count})")
    idx = np.arange(sample_count)
    return [idx[i:i + batch_size] for i in range(0, sample_count, batch_size)]


def _enumerated_batches(sample_count: int, batch_size: int):
    total = comb(sample_count, batch_size)
    if total > MAX_ENUMERATED_BATCHES:
        raise CapacityError(f"enumerating {total} batches exceeds the "
                            f"{MAX_ENUMERATED_BATCHES} batch limit")
    return [np.array(c) for c in combinations(range(sample_count), batch_size)]


def analytic_covariance(obj: Objective, x: np.ndarray, delta: float, batch_size: int,
                        scheme: BatchScheme = BatchScheme.SUBSET_ENUMERATION,
                        mode: MomentMode = MomentMode.EXACT) -> DiffusionReport:
    """Evaluate Sigma, Dhat and d_offdiag from the per-sample gradients.

    Sigma and d_offdiag are accumulated from their own batch sums (full
    pair sum and j != k pair sum respectively), so the split identity
    Sigma = Dhat / C + d_offdiag is a genuine cross-check rather than a
    definition.
    """
    m2 = alpha_second_moment(delta, mode)
    grads = obj.per_sample_grads(x)            # (N, n); CapacityError if too large
    N, n = grads.shape
    if batch_size < 1 or batch_size > N:
        raise MisuseError(f"batch_size {batch_size} out of range [1, {N}]")
    g = grads.mean(axis=0)
    gg = np.outer(g, g)

    second_moment = grads.T @ grads / N
    dhat = m2 * second_moment - gg

    if scheme is BatchScheme.FIXED_PARTITION:
        batches = _partition_batches(N, batch_size)
    else:
        batches = _enumerated_batches(N, batch_size)

    C = batch_size
    full = np.zeros((n, n))
    off = np.zeros((n, n))
    for batch in batches:
        gb = grads[batch]
        s = gb.sum(axis=0)
        pair_sum = np.outer(s, s)              # sum over all (j, k) pairs
        diag_sum = gb.T @ gb                   # sum over j == k
        full += m2 * pair_sum - C * C * gg
        off += m2 * (pair_sum - diag_sum) - C * (C - 1) * gg
    norm = len(batches) * C * C
    sigma = full / norm
    d_offdiag = off / norm

    return DiffusionReport(sigma=sigma, dhat=dhat, d_offdiag=d_offdiag,
                           d_scalar=float(np.trace(dhat)) / n,
                           moment_mode=mode, batch_scheme=scheme,
                           delta=delta, batch_size=batch_size)


def empirical_covariance(obj: Objective, x: np.ndarray, delta: float, batch_size: int,
                         draws: int, rng: np.random.Generator,
                         chunk: int = 200_000) -> np.ndarray:
    """Monte Carlo covariance of xi over uniformly sampled C-subsets.

    Centers with the known zero mean instead of the sample mean, removing
    that source of estimator bias.  Draws are vectorized in chunks; each
    chunk draws its subsets first, then its alphas, so results are
    deterministic for a given generator state.
    """
    if batch_size < 1 or batch_size > obj.sample_count:
        raise MisuseError(f"batch_size {batch_size} out of range "
                          f"[1, {obj.sample_count}]")
    grads = obj.per_sample_grads(x)
    N, n = grads.shape
    g = grads.mean(axis=0)

    accum = np.zeros((n, n))
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        # the C smallest of N iid uniforms form a uniformly random C-subset
        keys = rng.random((m, N))
        idx = np.argpartition(keys, batch_size - 1, axis=1)[:, :batch_size]
        alphas = rng.uniform(1.0 - delta, 1.0 + delta, size=m)
        batch_grads = grads[idx].mean(axis=1)
        xi = g[None, :] - alphas[:, None] * batch_grads
        accum += xi.T @ xi
        remaining -= m
    return accum / draws


def isotropic_scalar(report: DiffusionReport) -> float:
    """Project Dhat onto multiples of the identity: D = trace(Dhat) / n."""
    n = report.dhat.shape[0]
    return float(np.trace(report.dhat)) / n


def trace_diffusion_scalar(obj: Objective, x: np.ndarray, delta: float,
                           mode: MomentMode = MomentMode.EXACT,
                           chunk: int = 128) -> float:
    """D = trace(Dhat) / n without materializing any n x n matrix.

    trace(Dhat) = m2 * (1/N) sum_j |g_j|^2 - |g|^2, accumulated over
    sample chunks, which is the only covariance summary that stays
    affordable for large models.
    """
    m2 = alpha_second_moment(delta, mode)
    N = obj.sample_count
    sq_sum = 0.0
    for start in range(0, N, chunk):
        block = obj.per_sample_grads(x, np.arange(start, min(start + chunk, N)))
        sq_sum += float((block * block).sum())
    g = obj.grad(x)
    return (m2 * sq_sum / N - float(g @ g)) / obj.n
