"""Multi-scale structural similarity and intra-prompt diversity."""
from __future__ import annotations

import math
from itertools import combinations

import numpy as np
from scipy import signal

from ..errors import InvalidArgumentError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_terms(a, b, window, data_range):
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    filt = lambda x: signal.convolve2d(x, window, mode="valid")  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def min_side(scales, window_size=WINDOW_SIZE):
    """Smallest image side that keeps a full window at the coarsest scale."""
    return window_size * 2 ** (scales - 1)


def ms_ssim(a, b, scales=5, weights=None, window_size=WINDOW_SIZE, sigma=WINDOW_SIGMA, data_range=1.0) -> float:
    """MS-SSIM with a Gaussian window; contrast-structure terms at the coarse
    scales and the full SSIM at the coarsest, combined by ``weights``
    (renormalised when fewer than five scales are used). Negative
    contrast-structure terms are clipped to zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidArgumentError("ms_ssim needs two 2-D images of equal shape")
    if scales < 1:
        raise InvalidArgumentError("scales must be >= 1")
    need = min_side(scales, window_size)
    if min(a.shape) < need:
        raise InvalidArgumentError(f"images of side {min(a.shape)} are too small for {scales} scales; "
                                   f"minimum side is {need}")
    if weights is None:
        weights = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
        weights = weights / weights.sum()
    weights = np.asarray(weights, dtype=np.float64)
    window = gaussian_window(window_size, sigma)
    value = 1.0
    for s in range(scales):
        ssim, cs = _ssim_terms(a, b, window, data_range)
        term = ssim if s == scales - 1 else cs
        value *= max(term, 0.0) ** weights[s]
        if s < scales - 1:
            a, b = _downsample(a), _downsample(b)
    return float(value)


def _downsample(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def default_scales(side, window_size=WINDOW_SIZE, max_scales=5):
    """Largest scale count the image side supports (at least 1)."""
    s = max_scales
    while s > 1 and side < min_side(s, window_size):
        s -= 1
    return s


def intra_prompt_diversity(samples, metric=None):
    """Mean and std of the metric over all unordered sample pairs."""
    samples = list(samples)
    if len(samples) < 2:
        raise InvalidArgumentError("need at least two samples")
    if metric is None:
        scales = default_scales(min(np.shape(samples[0])))
        metric = lambda x, y: ms_ssim(x, y, scales=scales)  # noqa: E731
    values = np.array([metric(x, y) for x, y in combinations(samples, 2)], dtype=np.float64)
    return float(values.mean()), float(values.std()), len(values)


def token_bin(count, width=10):
    """1-based bin index: [1, width] -> 1, [width+1, 2*width] -> 2, ..."""
    return max(1, math.ceil(count / width))


def diversity_by_token_length(groups, width=10, metric=None):
    """``groups``: iterable of (token_count, samples) or (token_count, mean_value).

    Returns rows (bin_lo, bin_hi, mean, ci_lo, ci_hi, n, degenerate) with a
    normal-approximation 95% interval over per-group means.
    """
    per_bin: dict = {}
    for count, payload in groups:
        if np.isscalar(payload):
            value = float(payload)
        else:
            value = intra_prompt_diversity(payload, metric)[0]
        per_bin.setdefault(token_bin(count, width), []).append(value)
    rows = []
    for b in sorted(per_bin):
        vals = np.asarray(per_bin[b])
        mean = float(vals.mean())
        if len(vals) > 1:
            half = 1.959963984540054 * float(vals.std(ddof=1)) / math.sqrt(len(vals))
        else:
            half = 0.0
        rows.append({"bin_lo": (b - 1) * width + 1, "bin_hi": b * width, "mean": mean,
                     "ci_lo": mean - half, "ci_hi": mean + half, "n": len(vals),
                     "degenerate": int(len(vals) < 2)})
    return rows
