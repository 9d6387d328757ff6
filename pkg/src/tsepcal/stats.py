"""Gaussian vs log-Gaussian fits of repeated TSEP measurements."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

from .errors import DegenerateSampleError, ModelDomainError, PreconditionError

GAUSSIAN = "gaussian"
LOG_GAUSSIAN = "log_gaussian"
TIE_TOL = 1e-9

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DistFit:
    family: str
    location: float
    scale: float
    log_likelihood: float
    ks_statistic: float
    n: int

    @property
    def params(self):
        return self.location, self.scale

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == GAUSSIAN:
            return sps.norm.cdf(x, loc=self.location, scale=self.scale)
        return sps.lognorm.cdf(x, s=self.scale, scale=math.exp(self.location))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == GAUSSIAN:
            return sps.norm.pdf(x, loc=self.location, scale=self.scale)
        return sps.lognorm.pdf(x, s=self.scale, scale=math.exp(self.location))

    def mean(self) -> float:
        if self.family == GAUSSIAN:
            return self.location
        return math.exp(self.location + 0.5 * self.scale ** 2)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_sample(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise PreconditionError(f"need at least 2 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("samples must be finite")
    return x


def _ks(x: np.ndarray, cdf) -> float:
    return float(sps.kstest(x, cdf).statistic)


def fit_gaussian(samples) -> DistFit:
    """Maximum-likelihood normal fit (population variance)."""
    x = _as_sample(samples)
    if np.ptp(x) == 0:
        raise DegenerateSampleError("zero-variance sample")
    mu = float(x.mean())
    sigma = float(x.std())
    n = x.size
    loglik = -0.5 * n * (_LOG_2PI + 2.0 * math.log(sigma) + 1.0)
    ks = _ks(x, sps.norm(loc=mu, scale=sigma).cdf)
    return DistFit(GAUSSIAN, mu, sigma, float(loglik), ks, n)


def fit_log_gaussian(samples) -> DistFit:
    """Two-parameter log-normal fit by MLE on ln(x).

    Likelihood is the density of the raw values, so it is comparable with
    :func:`fit_gaussian` on the same sample.
    """
    x = _as_sample(samples)
    if np.any(x <= 0):
        raise ModelDomainError("log-Gaussian fit needs strictly positive samples")
    if np.ptp(x) == 0:
        raise DegenerateSampleError("zero-variance sample")
    lx = np.log(x)
    mu = float(lx.mean())
    sigma = float(lx.std())
    if sigma == 0:
        raise DegenerateSampleError("zero variance in log space")
    n = x.size
    loglik = -float(lx.sum()) - 0.5 * n * (_LOG_2PI + 2.0 * math.log(sigma) + 1.0)
    ks = _ks(x, sps.lognorm(s=sigma, scale=math.exp(mu)).cdf)
    return DistFit(LOG_GAUSSIAN, mu, sigma, float(loglik), ks, n)


def compare_families(samples) -> str:
    """Family with the larger likelihood; near-ties go to the Gaussian."""
    g = fit_gaussian(samples)
    lg = fit_log_gaussian(samples)
    if lg.log_likelihood - g.log_likelihood > TIE_TOL:
        return LOG_GAUSSIAN
    return GAUSSIAN


def point_estimate(samples, family: str) -> float:
    if family == GAUSSIAN:
        return float(np.mean(samples))
    if family == LOG_GAUSSIAN:
        return fit_log_gaussian(samples).mean()
    raise ValueError(f"unknown family {family!r}")


def repeat_policy(samples, family: str):
    """Keep every repeat for training; also return the diagnostic point estimate.

    Averaging is not used to collapse repeats because a skewed error does not
    average out to the physical value.
    """
    rows = np.asarray(samples, dtype=float).copy()
    return rows, point_estimate(rows, family)


def histogram(samples, fit: DistFit, bins: int = 20):
    """Histogram rows (bin_left, bin_right, count, fitted_pdf) with pdf at bin centres."""
    x = _as_sample(samples)
    counts, edges = np.histogram(x, bins=bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    pdf = fit.pdf(centres)
    return [(float(a), float(b), int(c), float(p)) for a, b, c, p in zip(edges[:-1], edges[1:], counts, pdf)]


def write_histogram_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count", "fitted_pdf"])
        for a, b, c, p in rows:
            w.writerow([repr(a), repr(b), c, repr(p)])


def fit_histogram_rows(samples, bins: int = 20) -> str:
    """Histogram CSV text against the selected family's fitted density."""
    rep_family = compare_families(samples)
    fit = fit_log_gaussian(samples) if rep_family == LOG_GAUSSIAN else fit_gaussian(samples)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "count", "fitted_pdf"])
    for a, b, c, p in histogram(samples, fit, bins):
        w.writerow([repr(a), repr(b), c, repr(p)])
    return buf.getvalue()


def fit_report(samples, condition: dict | None = None) -> dict:
    """Per-condition report: both fits plus the selected family."""
    g = fit_gaussian(samples)
    lg = fit_log_gaussian(samples)
    chosen = LOG_GAUSSIAN if lg.log_likelihood - g.log_likelihood > TIE_TOL else GAUSSIAN
    best = lg if chosen == LOG_GAUSSIAN else g
    return {
        "condition": condition or {},
        "family": chosen,
        "params": [best.location, best.scale],
        "loglik": best.log_likelihood,
        "ks": best.ks_statistic,
        "n": best.n,
        "fits": {GAUSSIAN: g.to_dict(), LOG_GAUSSIAN: lg.to_dict()},
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
