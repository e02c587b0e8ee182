"""Reconstruction quality metrics.

``delta`` is the plain sum of squared errors over all pixels (so
delta == mse * pixel_count exactly); PSNR is reported in dB against the
supplied peak value, with math.inf as the documented sentinel for a
zero-error reconstruction.
"""

import math
from dataclasses import dataclass

import numpy as np

from .operators import as_image


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    psnr: float
    delta: float

    def as_row(self):
        """Tab-separated value line matching :data:`METRIC_COLUMNS`."""
        return "\t".join(format(v, ".12g") for v in (self.mse, self.psnr, self.delta))


METRIC_COLUMNS = ("mse", "psnr", "delta")


def compute_metrics(estimate, truth, peak=1.0):
    """MSE, PSNR (dB) and total squared error between two images."""
    estimate = as_image(estimate)
    truth = as_image(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    if not (peak > 0):
        raise ValueError(f"peak must be positive, got {peak}")
    diff = (estimate - truth).ravel()
    delta = float(np.dot(diff, diff))
    mse = delta / diff.size
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(peak**2 / mse)
    return MetricsReport(mse=mse, psnr=psnr, delta=delta)
