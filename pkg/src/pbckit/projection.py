"""Projection of corrected bin probabilities onto valid CDFs, correction
averaging, and the fixed variable-weighted blend of two corrected systems.

The projection is exact Euclidean projection onto nondecreasing sequences via
pool-adjacent-violators, followed by clipping to [0, 1].  Clipping a monotone
sequence stays monotone and realizes the box-constrained projection, so the
composite is the projection onto the intersection.
"""

from __future__ import annotations

import numpy as np

from .cdf import CdfForecast
from .grids import AlignmentError

#: Fixed blend weight on the first (dynamical-input) system per variable.
BLEND_WEIGHTS = {"temperature": 0.5, "precipitation": 1.0, "mslp": 0.0}


def isotonic_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Unit-weight least-squares isotonic (nondecreasing) fit of a 1-D array
    by pool-adjacent-violators."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    # Blocks as (sum, count); merge backwards while means decrease.
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    top = 0
    for v in y:
        sums[top] = v
        counts[top] = 1
        top += 1
        while top > 1 and sums[top - 2] * counts[top - 1] > sums[top - 1] * counts[top - 2]:
            sums[top - 2] += sums[top - 1]
            counts[top - 2] += counts[top - 1]
            top -= 1
    return np.repeat(sums[:top] / counts[:top], counts[:top])


def project_to_cdf(raw: CdfForecast) -> CdfForecast:
    """Project each per-(date, cell) bin vector onto the space of valid CDFs.

    The K-1 free bins get the unique Euclidean projection onto nondecreasing
    vectors in [0, 1]; the final bin is fixed at 1.  Rows with any missing
    entry stay missing.
    """
    K = raw.K
    vals = raw.values
    flat = vals[..., : K - 1].reshape(-1, K - 1)
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        row = flat[i]
        if np.any(np.isnan(row)):
            out[i] = np.nan
        else:
            out[i] = isotonic_nondecreasing(row)
    out = np.clip(out, 0.0, 1.0)
    projected = np.empty_like(vals)
    projected[..., : K - 1] = out.reshape(vals[..., : K - 1].shape)
    projected[..., K - 1] = np.where(np.isnan(out[..., -1].reshape(vals.shape[:-1])), np.nan, 1.0)
    return CdfForecast(
        raw.variable, K, raw.target_dates, projected, raw.grid,
        lead_days=raw.lead_days, provenance=raw.provenance,
    )


def pbc_combine(a: CdfForecast, b: CdfForecast) -> CdfForecast:
    """Elementwise mean of two projected corrections; the monotone box is
    convex, so the result is a valid CDF."""
    a.check_aligned(b)
    mean = 0.5 * (a.values + b.values)
    return CdfForecast(
        a.variable, a.K, a.target_dates, mean, a.grid,
        lead_days=a.lead_days, provenance="pbc",
    )


def microduet(pbc_ecmwf: CdfForecast, pbc_poet: CdfForecast, variable: str) -> CdfForecast:
    """Fixed variable-specific blend: equal weights for temperature, all
    weight on the dynamical-input correction for precipitation, all weight on
    the hybrid-input correction for mean sea level pressure."""
    if variable not in BLEND_WEIGHTS:
        raise ValueError(f"unknown variable {variable!r}")
    if pbc_ecmwf.variable != variable:
        raise AlignmentError(f"inputs are {pbc_ecmwf.variable!r}, blend asked for {variable!r}")
    pbc_ecmwf.check_aligned(pbc_poet)
    w = BLEND_WEIGHTS[variable]
    if w == 1.0:
        blended = pbc_ecmwf.values
    elif w == 0.0:
        blended = pbc_poet.values
    else:
        blended = w * pbc_ecmwf.values + (1.0 - w) * pbc_poet.values
    return CdfForecast(
        variable, pbc_ecmwf.K, pbc_ecmwf.target_dates, blended, pbc_ecmwf.grid,
        lead_days=pbc_ecmwf.lead_days, provenance="custom",
    )
