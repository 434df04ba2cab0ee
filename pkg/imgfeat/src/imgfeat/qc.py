"""Ring-mask quality scoring: the fraction of dark pixels inside an annular
region decides whether a solar image is usable."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QcConfig:
    """Annulus geometry (fractions of the image half-width), the dark-pixel
    intensity threshold, and the rejection ratio."""

    inner: float = 0.7
    outer: float = 0.95
    dark_threshold: float = 0.1
    reject_ratio: float = 0.14

    def __post_init__(self):
        if not 0.0 <= self.inner < self.outer <= 1.0:
            raise ValueError(f"need 0 <= inner < outer <= 1, got ({self.inner}, {self.outer})")
        if self.dark_threshold < 0.0:
            raise ValueError(f"dark_threshold must be >= 0, got {self.dark_threshold}")
        if not 0.0 < self.reject_ratio < 1.0:
            raise ValueError(f"reject_ratio must be in (0, 1), got {self.reject_ratio}")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Collapse an (H, W[, C]) array to float grayscale; uint8 maps to [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D or 3-D image, got shape {arr.shape}")
    arr = arr.astype(np.float64)
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        arr = arr / 255.0
    return arr


def annulus_mask(shape: tuple[int, int], qc: QcConfig) -> np.ndarray:
    """Boolean mask of the ring between inner and outer radius fractions."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    half_width = min(h, w) / 2.0
    yy, xx = np.ogrid[:h, :w]
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return (r >= qc.inner * half_width) & (r <= qc.outer * half_width)


def ring_dark_ratio(image: np.ndarray, qc: QcConfig) -> float:
    """Fraction of annulus pixels with intensity below the dark threshold."""
    gray = to_grayscale(image)
    mask = annulus_mask(gray.shape, qc)
    if not mask.any():
        raise ValueError("annulus contains no pixels for this image size")
    return float((gray[mask] < qc.dark_threshold).mean())


def should_discard(ratio: float, qc: QcConfig) -> bool:
    """Discard when the dark ratio strictly exceeds the rejection ratio."""
    return ratio > qc.reject_ratio


def qc_filter(image: np.ndarray, qc: QcConfig) -> bool:
    """True when the image passes the quality check (keep)."""
    return not should_discard(ring_dark_ratio(image, qc), qc)
