"""Error bars for correlated Monte Carlo data."""
from __future__ import annotations

import numpy as np


def _blocks(x: np.ndarray, n_blocks: int) -> np.ndarray:
    n = x.shape[0]
    n_blocks = min(n_blocks, n)
    if n_blocks < 2:
        raise ValueError("need at least two samples for an error estimate")
    size = n // n_blocks
    return x[: size * n_blocks].reshape((n_blocks, size) + x.shape[1:])


def batch_means(x, n_blocks: int = 50):
    """Mean of ``x`` along axis 0 and its batch-means standard error."""
    x = np.asarray(x, dtype=np.float64)
    means = _blocks(x, n_blocks).mean(axis=1)
    b = means.shape[0]
    return x.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(b)


def jackknife(x, estimator=np.mean, n_blocks: int = 50):
    """Blocked delete-one jackknife.

    ``estimator`` maps a sample array (samples on axis 0) to a scalar or
    array. Returns ``(estimate on all data, standard error)``.
    """
    x = np.asarray(x, dtype=np.float64)
    blocks = _blocks(x, n_blocks)
    b = blocks.shape[0]
    full = estimator(blocks.reshape((-1,) + x.shape[1:]))
    loo = np.array([
        estimator(np.concatenate([blocks[:k], blocks[k + 1:]]).reshape((-1,) + x.shape[1:]))
        for k in range(b)
    ])
    var = (b - 1) / b * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0)
    return full, np.sqrt(var)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation of each row of ``x`` (chains x time), averaged over chains."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[1]
    y = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(y, n=2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n].mean(axis=0) / n
    if acov[0] == 0:
        return np.ones(n)
    return acov / acov[0]


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window ``W >= c tau``."""
    rho = autocorrelation(x)
    if len(rho) < 2:
        return 1.0
    taus = 1.0 + 2.0 * np.cumsum(rho[1:])
    w = np.arange(1, len(rho))
    hit = np.nonzero(w >= c * taus)[0]
    tau = taus[hit[0]] if hit.size else taus[-1]
    return float(max(tau, 1e-12))
