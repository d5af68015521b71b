"""Fixed multi-layer convolutional feature extractors.

Backbones are small stacks of seeded 3x3 convolutions with leaky-rectifier
activations; their weights are He-scaled Gaussian draws fixed at
construction and never updated. Activations are tapped after every layer,
with early layers at full resolution and later ones strided, and each tap
also reports its scalar count for the per-layer loss normalisation. The
alternative feature source reads a generator's own hidden block activations
instead of running a backbone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor
from .generators import LatentCode

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LayerSpec:
    """One conv tap: output channels and stride (3x3 kernel, zero pad 1)."""

    channels: int
    stride: int


@dataclass(frozen=True)
class BackboneSpec:
    """A named, seeded, immutable feature extractor."""

    name: str
    layer_specs: tuple[LayerSpec, ...]
    weight_seed: int
    in_channels: int = 3

    @property
    def depth(self) -> int:
        return len(self.layer_specs)

    def layer_shapes(self, input_size: int) -> list[tuple[int, int, int]]:
        shapes = []
        extent = input_size
        for spec in self.layer_specs:
            extent = extent // spec.stride
            if extent < 1:
                raise ShapeMismatchError(
                    f"backbone {self.name!r} reduces a {input_size}px input "
                    f"below 1px at depth {len(shapes) + 1}"
                )
            shapes.append((spec.channels, extent, extent))
        return shapes

    def layer_counts(self, input_size: int) -> list[int]:
        return [c * h * w for c, h, w in self.layer_shapes(input_size)]

    def weights(self) -> dict[str, np.ndarray]:
        return _backbone_weights(self.name, self.layer_specs, self.weight_seed,
                                 self.in_channels)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.weights())


@lru_cache(maxsize=None)
def _backbone_weights(name, layer_specs, weight_seed, in_channels):
    rng = np.random.default_rng(weight_seed)
    weights: dict[str, np.ndarray] = {}
    cin = in_channels
    for j, spec in enumerate(layer_specs):
        fan_in = cin * 9
        weights[f"conv{j}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                           size=(spec.channels, cin, 3, 3))
        weights[f"conv{j}.b"] = 0.1 * rng.standard_normal(spec.channels)
        cin = spec.channels
    return weights


@dataclass(frozen=True)
class FeatureStack:
    """Per-layer activations plus their scalar counts."""

    layers: tuple[Tensor, ...]
    counts: tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def layer_shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for t in self.layers]

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.layers]


def extract_features(backbone: BackboneSpec, image: Tensor) -> FeatureStack:
    """Activations at every tap layer; differentiable w.r.t. the image."""
    if not isinstance(image, Tensor):
        image = Tensor(np.asarray(image, dtype=np.float64))
    if image.data.ndim != 3 or image.data.shape[0] != backbone.in_channels:
        raise ShapeMismatchError(
            f"backbone {backbone.name!r} expects ({backbone.in_channels}, n, n) "
            f"input, got shape {image.data.shape}"
        )
    weights = backbone.weights()
    layers = []
    h = image
    for j, spec in enumerate(backbone.layer_specs):
        h = ad.conv2d(h, Tensor(weights[f"conv{j}.w"]), Tensor(weights[f"conv{j}.b"]),
                      stride=spec.stride, padding=1)
        h = ad.leaky_relu(h, LEAKY_SLOPE)
        layers.append(h)
    counts = tuple(t.size for t in layers)
    return FeatureStack(tuple(layers), counts)


def backbone_catalog() -> list[BackboneSpec]:
    """Available backbones: shallow-wide, the default, and deep-narrow."""
    return [
        BackboneSpec(
            name="shallow_wide",
            layer_specs=(LayerSpec(32, 1), LayerSpec(48, 2)),
            weight_seed=202,
        ),
        BackboneSpec(
            name="default",
            layer_specs=(LayerSpec(16, 1), LayerSpec(16, 1),
                         LayerSpec(32, 2), LayerSpec(64, 2)),
            weight_seed=101,
        ),
        BackboneSpec(
            name="deep_narrow",
            layer_specs=(LayerSpec(8, 1), LayerSpec(8, 1), LayerSpec(12, 2),
                         LayerSpec(12, 1), LayerSpec(16, 2), LayerSpec(24, 2)),
            weight_seed=303,
        ),
    ]


def get_backbone(name: str) -> BackboneSpec:
    for spec in backbone_catalog():
        if spec.name == name:
            return spec
    known = ", ".join(s.name for s in backbone_catalog())
    raise KeyError(f"unknown backbone {name!r}; available: {known}")


def generator_intermediate_features(generator, z) -> FeatureStack:
    """A generator's hidden block activations, reusable as a feature stack.

    Neural generators expose their three block outputs; analytic ones expose
    their blob fields as single-channel pseudo-layers.
    """
    if isinstance(z, LatentCode):
        z = Tensor(z.values)
    elif not isinstance(z, Tensor):
        z = Tensor(np.asarray(z, dtype=np.float64))
    if getattr(generator, "kind", None) not in ("neural", "analytic"):
        raise ValueError(
            f"unsupported generator kind {getattr(generator, 'kind', None)!r}"
        )
    _, hidden = generator.synthesize_with_hidden(z)
    return FeatureStack(tuple(hidden), tuple(t.size for t in hidden))


def pooled_embedding(backbone: BackboneSpec, image: np.ndarray) -> np.ndarray:
    """Channel-wise global average of the last tap layer (the metric space)."""
    stack = extract_features(backbone, Tensor(np.asarray(image, dtype=np.float64)))
    return stack.layers[-1].data.mean(axis=(1, 2))
