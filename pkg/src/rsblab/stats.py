"""Error analysis for correlated Monte Carlo series and disorder ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def autocorrelation(x) -> np.ndarray:
    """Normalized autocorrelation function via FFT."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    dx = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(dx, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n]
    if acf[0] == 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acf / acf[0]


def integrated_autocorrelation_time(x, window_factor: float = 5.0) -> float:
    """tau_int = 1/2 + sum_t rho(t) with Sokal's self-consistent window.

    Returned in units of the sample spacing; 0.5 means uncorrelated samples.
    """
    rho = autocorrelation(x)
    tau = 0.5
    for w in range(1, len(rho)):
        tau += rho[w]
        if w >= window_factor * tau:
            break
    return float(max(tau, 0.5))


def jackknife(samples, estimator=np.mean, axis: int = 0):
    """Leave-one-out jackknife of ``estimator`` over ``samples`` along ``axis``.

    Returns ``(estimate, error)`` where the estimate is the full-sample value.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    if n < 2:
        raise ValueError("jackknife needs at least two resampling units")
    full = estimator(samples)
    total = np.sum(samples, axis=axis)
    if estimator is np.mean:
        loo = (total[None] - np.moveaxis(samples, axis, 0)) / (n - 1)
    else:
        loo = np.array([estimator(np.delete(samples, k, axis=axis)) for k in range(n)])
    mean_loo = loo.mean(axis=0)
    err = np.sqrt((n - 1) / n * np.sum((loo - mean_loo) ** 2, axis=0))
    return full, err


def bin_series(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n_bins = len(x) // width
    return x[: n_bins * width].reshape(n_bins, width, *x.shape[1:]).mean(axis=1)


@dataclass(frozen=True)
class BinningResult:
    mean: float
    error: float
    naive_error: float
    bin_width: int
    converged: bool


def binning_analysis(x, min_bins: int = 16, plateau: float = 1.1,
                     report_bins: int = 64) -> BinningResult:
    """Jackknife error over bins, doubling the bin width until it plateaus.

    Errors are computed for every width that leaves at least ``min_bins`` bins.
    A doubling is flat when the error changes by a factor below ``plateau`` or
    by less than the error's own statistical noise, 1/sqrt(2 (bins - 1)). The
    plateau starts at the first width from which every further doubling is
    flat; a single early flat step is not enough, since slow modes only show
    up at larger widths. The reported error is the largest plateau error among
    widths with at least ``report_bins`` bins. Without a plateau the error at
    the largest width is kept and ``converged`` is False.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two samples")
    naive = float(np.std(x, ddof=1) / np.sqrt(n))
    widths, errs = [1], [jackknife(bin_series(x, 1))[1]]
    while n // (2 * widths[-1]) >= min_bins:
        widths.append(2 * widths[-1])
        errs.append(jackknife(bin_series(x, widths[-1]))[1])
    start = None
    for k in range(len(errs) - 2, -1, -1):
        noise = 1.0 / math.sqrt(2.0 * (n // widths[k + 1] - 1))
        if errs[k] == 0.0 or errs[k + 1] / errs[k] < max(plateau, 1.0 + noise):
            start = k
        else:
            break
    if start is None:
        return BinningResult(mean=float(x.mean()), error=float(errs[-1]), naive_error=naive,
                             bin_width=widths[-1], converged=False)
    stop = start + 1
    while stop < len(errs) and n // widths[stop] >= report_bins:
        stop += 1
    k = start + int(np.argmax(errs[start:stop]))
    return BinningResult(mean=float(x.mean()), error=float(errs[k]), naive_error=naive,
                         bin_width=widths[k], converged=True)


@dataclass
class ObservableSeries:
    """One measured observable: values with the sweep at which each was taken."""

    name: str
    samples: np.ndarray
    sweeps: np.ndarray
    bin_width: int = 1

    def analyse(self) -> BinningResult:
        res = binning_analysis(self.samples)
        self.bin_width = res.bin_width
        return res

    @property
    def tau_int(self) -> float:
        return integrated_autocorrelation_time(self.samples)
