"""Image-quality metrics: Frechet distance, global SSIM, PSNR.

The Frechet distance is computed between Gaussian fits of pooled feature
samples, with unbiased covariances and the matrix square root taken in the
symmetric form sqrt(sqrt(A) B sqrt(A)). SSIM is the single-statistics
(whole image) formula with c1 = 1e-4 and c2 = 9e-4 on [0, 1] data; PSNR
uses R = 1. Generated images in [-1, 1] are mapped to [0, 1] before SSIM
or PSNR via `to_unit_range`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import BackboneSpec, pooled_embedding

SSIM_C1 = 1e-4
SSIM_C2 = 9e-4
FID_CLIP = 1e-8


class NotPSDError(ValueError):
    """Raised when a covariance-like matrix is not positive semdefinite."""


@dataclass(frozen=True)
class FeatureSample:
    """m pooled embeddings of dimension d, rows are samples."""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        object.__setattr__(self, "vectors", vectors)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def mean(self) -> np.ndarray:
        return self.vectors.mean(axis=0)

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("covariance needs at least 2 samples")
        return np.cov(self.vectors, rowvar=False).reshape(self.dim, self.dim)


@dataclass(frozen=True)
class MetricReport:
    """The three-metric summary; fid is None when sample sets are degenerate."""

    fid: float | None
    ssim: float
    psnr: float

    def as_dict(self) -> dict:
        return {"fid": self.fid, "ssim": self.ssim, "psnr": self.psnr}


def matrix_sqrt_psd(matrix: np.ndarray, sym_tol: float = 1e-10,
                    eig_tol: float = -1e-10) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues within `eig_tol` of zero are clipped; anything more negative
    (or an asymmetric input) is an error.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    scale = max(1.0, float(np.abs(matrix).max()) if matrix.size else 1.0)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"matrix square root needs a square matrix, got {matrix.shape}")
    if np.abs(matrix - matrix.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("matrix square root needs a symmetric input")
    eigvals, eigvecs = np.linalg.eigh(matrix)
    if eigvals.min(initial=0.0) < eig_tol * scale:
        raise NotPSDError(
            f"matrix is not PSD: smallest eigenvalue {eigvals.min():.3e}"
        )
    root = eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return (root + root.T) / 2.0


def fid(a: FeatureSample, b: FeatureSample) -> float:
    """Frechet distance between Gaussian fits of two sample sets."""
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    if a.count < 2 or b.count < 2:
        raise ValueError("fid needs at least 2 samples per set")
    mu_a, mu_b = a.mean(), b.mean()
    sig_a, sig_b = a.covariance(), b.covariance()
    root_a = matrix_sqrt_psd(sig_a)
    cross = matrix_sqrt_psd(root_a @ sig_b @ root_a)
    value = float(np.sum((mu_a - mu_b) ** 2)
                  + np.trace(sig_a) + np.trace(sig_b) - 2.0 * np.trace(cross))
    # sqrt of near-zero eigenvalues carries ~d*sqrt(eps) noise, so the
    # negative-noise allowance scales with dimension and trace magnitude
    tolerance = FID_CLIP * max(1.0, a.dim, np.trace(sig_a) + np.trace(sig_b))
    if value < -tolerance:
        raise NotPSDError(f"fid produced {value:.3e}, beyond the clip tolerance")
    return max(value, 0.0)


def fid_point(vector: np.ndarray, sample: FeatureSample) -> float:
    """Frechet distance from a single embedding (a point mass) to a sample set.

    The point's covariance is zero, so the cross term vanishes and the value
    reduces to the squared mean distance plus the sample's total variance.
    """
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (sample.dim,):
        raise ValueError(
            f"embedding shape {vector.shape} does not match dimension {sample.dim}"
        )
    return float(np.sum((vector - sample.mean()) ** 2)
                 + np.trace(sample.covariance()))


def to_unit_range(image: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] image to the [0, 1] range the metrics are defined on."""
    return (np.asarray(image, dtype=np.float64) + 1.0) / 2.0


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Global-statistics SSIM on [0, 1] data (population moments)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shapes {x.shape} and {y.shape} differ")
    mu_x, mu_y = x.mean(), y.mean()
    var_x, var_y = x.var(), y.var()
    cov_xy = ((x - mu_x) * (y - mu_y)).mean()
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov_xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(num / den)


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(R^2 / MSE); +inf for identical images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"psnr: shapes {x.shape} and {y.shape} differ")
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def embed_images(backbone: BackboneSpec, images) -> FeatureSample:
    """Pool every image through the backbone's last tap layer."""
    vectors = np.stack([pooled_embedding(backbone, img) for img in images])
    return FeatureSample(vectors)


def image_report(x: np.ndarray, y: np.ndarray) -> MetricReport:
    """SSIM and PSNR between two engine-range images; fid needs sample sets."""
    xu, yu = to_unit_range(x), to_unit_range(y)
    return MetricReport(fid=None, ssim=ssim(xu, yu), psnr=psnr(xu, yu))
