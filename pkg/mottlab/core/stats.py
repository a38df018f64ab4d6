"""Batch-means estimates and small fitting helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import stats as sps

from mottlab.errors import UsageError

DEFAULT_BATCHES = 16
MIN_BATCHES = 8


@dataclass(slots=True, frozen=True)
class Estimate:
    """Monte Carlo estimate with its batch-means standard error."""

    value: float
    stderr: float
    n_batches: int
    n_samples: int

    def z_score(self, target: float, target_stderr: float = 0.0) -> float:
        """Distance to ``target`` in units of the combined standard error."""
        scale = math.hypot(self.stderr, target_stderr)
        if scale == 0.0:
            return 0.0 if self.value == target else math.inf
        return abs(self.value - target) / scale

    def agrees_with(self, target: float, target_stderr: float = 0.0, sigmas: float = 3.0) -> bool:
        return self.z_score(target, target_stderr) <= sigmas

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_batches": self.n_batches,
            "n_samples": self.n_samples,
        }


def _batched(samples: np.ndarray, n_batches: int) -> np.ndarray:
    """Batch means of equally sized batches; the leading remainder is dropped."""
    if n_batches < MIN_BATCHES:
        raise UsageError(f"batch means needs at least {MIN_BATCHES} batches, got {n_batches}")
    n = samples.shape[0]
    if n < n_batches:
        raise UsageError(f"{n} samples cannot fill {n_batches} batches")
    size = n // n_batches
    trimmed = samples[n - size * n_batches :]
    return trimmed.reshape((n_batches, size) + samples.shape[1:]).mean(axis=1)


def batch_means(samples: np.ndarray, n_batches: int = DEFAULT_BATCHES) -> Estimate:
    """Mean of ``samples`` with a batch-means standard error.

    Fewer samples than batches (e.g. one endpoint per walker) fall back to one
    batch per sample, which still needs at least ``MIN_BATCHES`` samples.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    batches = min(int(n_batches), x.size)
    means = _batched(x, batches)
    stderr = float(np.std(means, ddof=1) / math.sqrt(batches))
    return Estimate(value=float(np.mean(means)), stderr=stderr, n_batches=batches, n_samples=int(x.size))


def independent_mean(samples: np.ndarray) -> Estimate:
    """Mean of independent samples (e.g. one per environment) with its standard error.

    A single sample has no spread to measure; its stderr is nan.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise UsageError("independent_mean needs at least one sample")
    stderr = float(sps.sem(x, ddof=1)) if x.size > 1 else math.nan
    return Estimate(value=float(np.mean(x)), stderr=stderr, n_batches=int(x.size), n_samples=int(x.size))


def ratio_of_means(numerator: np.ndarray, denominator: np.ndarray, n_batches: int = DEFAULT_BATCHES) -> Estimate:
    """Estimate of mean(num) / mean(den) with a delta-method batch-means error."""
    pair = np.column_stack([np.asarray(numerator, dtype=np.float64), np.asarray(denominator, dtype=np.float64)])
    batches = min(int(n_batches), pair.shape[0])
    means = _batched(pair, batches)
    num, den = means.mean(axis=0)
    ratios = means[:, 0] / den - num * means[:, 1] / den**2
    stderr = float(np.std(ratios, ddof=1) / math.sqrt(batches))
    return Estimate(value=float(num / den), stderr=stderr, n_batches=batches, n_samples=int(pair.shape[0]))


def long_run_covariance(x: np.ndarray, y: np.ndarray, n_batches: int = DEFAULT_BATCHES) -> Estimate:
    """Batch-means estimate of lim Cov(S_n^x, S_n^y) / n for two stationary series.

    The standard error uses the Wishart variance (s_xy^2 + s_xx s_yy) / (a - 1).
    """
    pair = np.column_stack([np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)])
    size = pair.shape[0] // n_batches
    means = _batched(pair, n_batches)
    cov = size * np.cov(means, rowvar=False)
    value = float(cov[0, 1])
    stderr = math.sqrt((value**2 + cov[0, 0] * cov[1, 1]) / (n_batches - 1))
    return Estimate(value=value, stderr=stderr, n_batches=n_batches, n_samples=int(pair.shape[0]))


@dataclass(slots=True, frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "slope_stderr": self.slope_stderr,
        }


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    res = sps.linregress(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return LinearFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        r_squared=float(res.rvalue**2),
        slope_stderr=float(res.stderr),
    )
