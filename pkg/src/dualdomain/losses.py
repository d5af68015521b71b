"""The synthesis objective: masked perceptual + pixel losses and the splice.

All loss values are mean-squared by default: the per-layer perceptual term
divides the squared feature distance by the layer's scalar count, which is
exactly a mean-square reduction, and the pixel terms are plain MSE over all
elements. The crossover term can optionally use an unsquared Euclidean norm
(`norm="euclidean"`); mean-square remains the default everywhere.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor
from .features import FeatureStack
from .segmentation import Mask, MaskPyramid, build_mask_pyramid


def naive_crossover(x_s: np.ndarray, y_s: Mask, x_t: np.ndarray,
                    y_t_bar: Mask) -> np.ndarray:
    """Additive cut-and-paste splice of the masked source and target images."""
    x_s = np.asarray(x_s, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_s.shape != x_t.shape:
        raise ShapeMismatchError(
            f"crossover: image shapes {x_s.shape} and {x_t.shape} differ"
        )
    if y_s.shape != x_s.shape[1:] or y_t_bar.shape != x_t.shape[1:]:
        raise ShapeMismatchError(
            f"crossover: mask shapes {y_s.shape}/{y_t_bar.shape} do not match "
            f"image extent {x_s.shape[1:]}"
        )
    return x_s * y_s.grid[None] + x_t * y_t_bar.grid[None]


def masked_feature_distance(stack: FeatureStack, masked_reference,
                            pyramid: MaskPyramid) -> Tensor:
    """Sum over layers of mean-square(F_j * lambda_j - reference_j)."""
    if len(pyramid.levels) != stack.depth:
        raise ShapeMismatchError(
            f"pyramid has {len(pyramid.levels)} levels but the feature stack "
            f"has {stack.depth} layers"
        )
    total = None
    for layer, ref, lam in zip(stack.layers, masked_reference, pyramid.levels):
        if layer.shape != lam.shape:
            raise ShapeMismatchError(
                f"pyramid level shape {lam.shape} does not match feature layer "
                f"shape {layer.shape}"
            )
        term = ad.msq(ad.mul(layer, Tensor(lam)) - Tensor(ref))
        total = term if total is None else total + term
    return total


def mask_feature_stack(stack: FeatureStack, pyramid: MaskPyramid) -> list[np.ndarray]:
    """Constant masked reference activations, computed once per run."""
    return [layer.data * lam for layer, lam in zip(stack.layers, pyramid.levels)]


def perceptual_loss(features_fn, image_a, image_b, pyramid: MaskPyramid) -> Tensor:
    """Masked multi-layer feature distance between two images."""
    stack_a = features_fn(_as_image_tensor(image_a))
    stack_b = features_fn(_as_image_tensor(image_b))
    reference = mask_feature_stack(stack_b, pyramid)
    return masked_feature_distance(stack_a, reference, pyramid)


def _as_image_tensor(image) -> Tensor:
    return image if isinstance(image, Tensor) else Tensor(np.asarray(image))


def _mask3(mask: Mask, channels: int) -> np.ndarray:
    return np.broadcast_to(mask.grid, (channels,) + mask.grid.shape).copy()


def domain_loss(features_fn, generator, z_hat: Tensor, x_ref: np.ndarray,
                mask: Mask) -> Tensor:
    """Masked perceptual plus masked pixel MSE between G(z_hat) and x_ref."""
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if mask.shape != x_ref.shape[1:]:
        raise ShapeMismatchError(
            f"mask extent {mask.shape} does not match image extent {x_ref.shape[1:]}"
        )
    generated = generator.synthesize(z_hat)
    ref_stack = features_fn(Tensor(x_ref))
    pyramid = build_mask_pyramid(mask, [t.shape for t in ref_stack.layers])
    stack = features_fn(generated)
    perceptual = masked_feature_distance(
        stack, mask_feature_stack(ref_stack, pyramid), pyramid)
    m3 = Tensor(_mask3(mask, x_ref.shape[0]))
    pixel = ad.msq(ad.mul(generated, m3) - Tensor(x_ref * m3.data))
    return perceptual + pixel


def splice(g_s: Tensor, y_s: Mask, g_t: Tensor, y_t_bar: Mask) -> Tensor:
    """On-tape cut-and-paste of the two current generator outputs."""
    channels = g_s.shape[0]
    return (ad.mul(g_s, Tensor(_mask3(y_s, channels)))
            + ad.mul(g_t, Tensor(_mask3(y_t_bar, channels))))


def crossover_loss(z_hat: Tensor, g_source, g_target, y_s: Mask, y_t_bar: Mask,
                   x_c: np.ndarray, norm: str = "mse") -> Tensor:
    """Distance between the current splice and the fixed crossover image."""
    s_c = splice(g_source.synthesize(z_hat), y_s,
                 g_target.synthesize(z_hat), y_t_bar)
    return crossover_distance(s_c, x_c, norm)


def crossover_distance(s_c: Tensor, x_c: np.ndarray, norm: str = "mse") -> Tensor:
    x_c = np.asarray(x_c, dtype=np.float64)
    if s_c.shape != x_c.shape:
        raise ShapeMismatchError(
            f"crossover: splice shape {s_c.shape} does not match {x_c.shape}"
        )
    diff = s_c - Tensor(x_c)
    if norm == "mse":
        return ad.msq(diff)
    if norm == "euclidean":
        return ad.sqrt(ad.tsum(ad.mul(diff, diff)) + 1e-24)
    raise ValueError(f"unknown crossover norm {norm!r}")


def total_loss(l_s: Tensor, l_t: Tensor, l_c: Tensor, weights) -> Tensor:
    """Weighted sum alpha*L_s + beta*L_t + gamma*L_c."""
    return ad.mul(l_s, weights.alpha) + ad.mul(l_t, weights.beta) \
        + ad.mul(l_c, weights.gamma)


def masked_mse(a: np.ndarray, b: np.ndarray, mask: Mask) -> float:
    """Mean squared difference restricted to the masked region."""
    weight = mask.grid[None]
    denom = weight.sum() * a.shape[0]
    if denom == 0.0:
        return 0.0
    return float((((a - b) ** 2) * weight).sum() / denom)
