"""Part masks and their per-layer pyramids.

Masks are binary by construction here (analytic or threshold segmenters),
though the container tolerates soft values in [0, 1]. Pyramids are built
with exact area-average pooling, so a level at half resolution carries
one quarter of each 2x2 block's mass; this preserves total mask mass up
to the area ratio and keeps the masked losses well behaved at coarse
layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generators import ANALYTIC_LATENT_DIM, AnalyticGenerator, LatentCode

BLOB_PARTS = (0, 1)
UNION_PART = "union"


@dataclass(frozen=True)
class Mask:
    """Spatial weighting in [0, 1]; binary masks support exact complement."""

    grid: np.ndarray

    def __post_init__(self):
        grid = np.clip(np.asarray(self.grid, dtype=np.float64), 0.0, 1.0)
        object.__setattr__(self, "grid", grid)

    @property
    def binary_flag(self) -> bool:
        return bool(np.all((self.grid == 0.0) | (self.grid == 1.0)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape

    def complement(self) -> "Mask":
        return Mask(1.0 - self.grid)

    def area(self) -> float:
        return float(self.grid.sum())


@dataclass(frozen=True)
class MaskPyramid:
    """One channel-broadcast soft mask per feature layer."""

    levels: tuple[np.ndarray, ...]

    def level_shapes(self) -> list[tuple[int, ...]]:
        return [lvl.shape for lvl in self.levels]


def _latent_values(z) -> np.ndarray:
    if isinstance(z, LatentCode):
        return z.values
    return np.asarray(z, dtype=np.float64)


def segment_analytic(z, part, image_size: int = 32) -> Mask:
    """Indicator mask of a blob (or the union of all blobs) for latent z.

    Geometry depends only on the latent, so the mask is identical for both
    styles of an analytic pair.
    """
    values = _latent_values(z)
    if values.shape != (ANALYTIC_LATENT_DIM,):
        raise ValueError(
            f"analytic segmentation expects latent dim {ANALYTIC_LATENT_DIM}, "
            f"got shape {tuple(values.shape)}"
        )
    fields = AnalyticGenerator("A", image_size).support_fields(values)
    if part == UNION_PART:
        support = np.max(fields, axis=0)
    elif part in BLOB_PARTS:
        support = fields[part]
    else:
        raise ValueError(f"unknown part selector {part!r}; use 0, 1 or 'union'")
    return Mask((support > 0.5).astype(np.float64))


def segment_threshold(image: np.ndarray, channel: int, tau: float) -> Mask:
    """Binary mask of pixels whose `channel` value exceeds tau."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {image.shape}")
    if not 0 <= channel < image.shape[0]:
        raise ValueError(
            f"channel {channel} out of range for {image.shape[0]} channels"
        )
    return Mask((image[channel] > tau).astype(np.float64))


def build_mask_pyramid(mask: Mask, layer_shapes) -> MaskPyramid:
    """Area-average the mask to each layer resolution, broadcast to channels.

    Every layer's spatial extent must divide the mask extent exactly.
    """
    h0, w0 = mask.grid.shape
    levels = []
    for shape in layer_shapes:
        c, h, w = shape
        if h <= 0 or w <= 0 or h0 % h != 0 or w0 % w != 0:
            raise ValueError(
                f"layer extent ({h}, {w}) does not divide mask extent ({h0}, {w0})"
            )
        pooled = mask.grid.reshape(h, h0 // h, w, w0 // w).mean(axis=(1, 3))
        levels.append(np.broadcast_to(pooled, (c, h, w)).copy())
    return MaskPyramid(tuple(levels))


def coverage_diagnostics(y_s: Mask, y_t_bar: Mask) -> dict[str, float]:
    """Double-covered and uncovered pixel counts of the cut-and-paste splice."""
    coverage = y_s.grid + y_t_bar.grid
    return {
        "overlap_area": float(np.sum(coverage > 1.5)),
        "hole_area": float(np.sum(coverage < 0.5)),
    }


def intersection_over_union(a: Mask, b: Mask) -> float:
    """IoU of two binary masks; 1.0 when both are empty."""
    inter = float(np.sum((a.grid > 0.5) & (b.grid > 0.5)))
    union = float(np.sum((a.grid > 0.5) | (b.grid > 0.5)))
    if union == 0.0:
        return 1.0
    return inter / union
