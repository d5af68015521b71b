"""Pose-aligned generator pairs over a shared latent space.

Two flavours exist. The analytic pair renders soft blobs whose geometry is
an exact, closed-form function of the latent code, which makes masks and
alignment testable against pixel-counting oracles. The neural pair is a
small seeded upsampling convnet whose target member is a weight-perturbed
copy of the source member. Generator weights are plain constants in the
computation graph: only the latent code is ever differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ANALYTIC_LATENT_DIM = 8
NEURAL_LATENT_DIM = 32

# Blob placement boxes and radius range, as fractions of the image side.
# At z = 0 every sigmoid sits at 0.5, putting blob 0 at (0.35, 0.40) and
# blob 1 at (0.65, 0.60) with radius 0.18 * n.
BLOB_BOXES = (
    ((0.15, 0.55), (0.20, 0.60)),
    ((0.45, 0.85), (0.40, 0.80)),
)
RADIUS_BOX = (0.10, 0.26)
EDGE_SOFTNESS = 0.0625  # sigmoid edge width as a fraction of the image side

# Shared blob colour ranges (interpolated by the two appearance latents).
BLOB_COLOR_LO = np.array([[0.90, 0.25, -0.55], [-0.30, 0.55, 0.90]])
BLOB_COLOR_HI = np.array([[0.25, 0.85, 0.35], [0.80, -0.25, 0.65]])

STYLE_PARAMS = {
    "A": {
        "background": np.array([-0.82, -0.78, -0.70]),
        "fill_opacity": 0.92,
        "ring_strength": 0.25,
        "ring_color": np.array([0.90, 0.90, 0.85]),
    },
    "B": {
        "background": np.array([0.82, 0.78, 0.70]),
        "fill_opacity": 0.45,
        "ring_strength": 0.90,
        "ring_color": np.array([-0.90, -0.90, -0.85]),
    },
}


@dataclass(frozen=True)
class LatentCode:
    """A latent vector plus the seed that produced it."""

    values: np.ndarray
    seed: int

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def sample_latent(rng_seed: int, dim: int) -> LatentCode:
    """Draw a standard-normal latent code from a deterministic seeded stream."""
    if dim <= 0:
        raise ValueError(f"latent dimension must be positive, got {dim}")
    values = np.random.default_rng(rng_seed).standard_normal(dim)
    return LatentCode(values=values, seed=rng_seed)


def _sigmoid(u):
    # Works on Tensor and ndarray alike: sigma(u) = (1 + tanh(u/2)) / 2.
    if isinstance(u, Tensor):
        return ad.add(ad.mul(ad.tanh(ad.mul(u, 0.5)), 0.5), 0.5)
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _slice_scalar(z: Tensor, index: int) -> Tensor:
    # Extract one coordinate as a scalar tensor via a picking mask.
    mask = np.zeros(z.shape)
    mask[index] = 1.0
    return ad.tsum(ad.mul(z, Tensor(mask)))


class AnalyticGenerator:
    """Closed-form blob renderer; styles share geometry, differ in paint."""

    kind = "analytic"

    def __init__(self, style: str, image_size: int = 32):
        if style not in STYLE_PARAMS:
            raise ValueError(f"unknown analytic style {style!r}")
        self.style = style
        self.style_params = STYLE_PARAMS[style]
        self.latent_dim = ANALYTIC_LATENT_DIM
        self.image_size = image_size
        self.output_shape = (3, image_size, image_size)
        n = image_size
        cols, rows = np.meshgrid(np.arange(n) + 0.5, np.arange(n) + 0.5)
        self._grid_x = cols
        self._grid_y = rows

    def _check_latent(self, values) -> None:
        if values.shape != (self.latent_dim,):
            raise ValueError(
                f"analytic generator expects latent dim {self.latent_dim}, "
                f"got shape {tuple(values.shape)}"
            )

    def blob_fields(self, z: Tensor) -> list[Tensor]:
        """Soft support fields, one per blob, each in (0, 1)."""
        self._check_latent(z.data)
        n = self.image_size
        w = EDGE_SOFTNESS * n
        gx, gy = Tensor(self._grid_x), Tensor(self._grid_y)
        fields = []
        for i, (cx_box, cy_box) in enumerate(BLOB_BOXES):
            cx = self._squash(_slice_scalar(z, 3 * i + 0), cx_box, n)
            cy = self._squash(_slice_scalar(z, 3 * i + 1), cy_box, n)
            r = self._squash(_slice_scalar(z, 3 * i + 2), RADIUS_BOX, n)
            dx = gx - cx
            dy = gy - cy
            dist = ad.sqrt(dx * dx + dy * dy + 1e-12)
            fields.append(_sigmoid((r - dist) * (1.0 / w)))
        return fields

    @staticmethod
    def _squash(coord, box, n):
        lo, hi = box
        return _sigmoid(coord) * ((hi - lo) * n) + lo * n

    def support_fields(self, values: np.ndarray) -> np.ndarray:
        """Constant-mode blob fields as a (2, n, n) array."""
        fields = self.blob_fields(Tensor(np.asarray(values, dtype=np.float64)))
        return np.stack([f.data for f in fields])

    def synthesize(self, z: Tensor) -> Tensor:
        return self._render(z)[0]

    def synthesize_with_hidden(self, z: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Image plus the blob fields exposed as (1, n, n) pseudo-layers."""
        image, fields = self._render(z)
        return image, [ad.reshape(f, (1, self.image_size, self.image_size))
                       for f in fields]

    def _render(self, z: Tensor) -> tuple[Tensor, list[Tensor]]:
        fields = self.blob_fields(z)
        appearance = [_sigmoid(_slice_scalar(z, 6)), _sigmoid(_slice_scalar(z, 7))]
        params = self.style_params
        kappa, rho = params["fill_opacity"], params["ring_strength"]
        channels = [Tensor(np.full((self.image_size,) * 2, params["background"][c]))
                    for c in range(3)]
        for i, f in enumerate(fields):
            mix = appearance[i]
            fill_w = f * kappa
            keep = 1.0 - fill_w
            ring = (f * (1.0 - f)) * (4.0 * rho)
            ring_keep = 1.0 - ring
            for c in range(3):
                lo, hi = BLOB_COLOR_LO[i, c], BLOB_COLOR_HI[i, c]
                color = mix * (hi - lo) + lo
                channels[c] = channels[c] * keep + (color * fill_w)
                channels[c] = channels[c] * ring_keep + ring * params["ring_color"][c]
        return ad.stack(channels), fields

    def image(self, values: np.ndarray) -> np.ndarray:
        """Constant forward pass: latent values in, (3, n, n) array out."""
        return self.synthesize(Tensor(np.asarray(values, dtype=np.float64))).data

    def state_arrays(self) -> dict[str, np.ndarray]:
        params = self.style_params
        return {
            "blob_boxes": np.array(BLOB_BOXES, dtype=np.float64).ravel(),
            "radius_box": np.array(RADIUS_BOX, dtype=np.float64),
            "color_lo": BLOB_COLOR_LO.copy(),
            "color_hi": BLOB_COLOR_HI.copy(),
            "background": params["background"].copy(),
            "paint": np.array([params["fill_opacity"], params["ring_strength"]]),
            "ring_color": params["ring_color"].copy(),
        }


class NeuralGenerator:
    """Seeded mini-convnet: dense seed map, three upsample+conv blocks, tanh."""

    kind = "neural"
    CHANNELS = (32, 24, 16, 12)

    def __init__(self, weights: dict[str, np.ndarray], image_size: int = 32,
                 latent_dim: int = NEURAL_LATENT_DIM):
        if image_size % 8 != 0:
            raise ValueError(f"image size must be a multiple of 8, got {image_size}")
        self.weights = weights
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.output_shape = (3, image_size, image_size)
        self.style_params = weights

    @classmethod
    def seeded(cls, seed: int, image_size: int = 32,
               latent_dim: int = NEURAL_LATENT_DIM) -> "NeuralGenerator":
        rng = np.random.default_rng(seed)
        c0, c1, c2, c3 = cls.CHANNELS
        base = image_size // 8
        weights: dict[str, np.ndarray] = {}

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        weights["dense.w"] = he((c0 * base * base, latent_dim), latent_dim)
        weights["dense.b"] = 0.1 * rng.standard_normal(c0 * base * base)
        for k, (cin, cout) in enumerate(((c0, c1), (c1, c2), (c2, c3))):
            weights[f"block{k + 1}.w"] = he((cout, cin, 3, 3), cin * 9)
            weights[f"block{k + 1}.b"] = 0.1 * rng.standard_normal(cout)
        weights["out.w"] = he((3, c3, 3, 3), c3 * 9)
        weights["out.b"] = 0.1 * rng.standard_normal(3)
        return cls(weights, image_size=image_size, latent_dim=latent_dim)

    def perturbed(self, noise_seed: int, scale: float) -> "NeuralGenerator":
        """Copy with seeded Gaussian noise of `scale` added to every weight."""
        rng = np.random.default_rng(noise_seed)
        noisy = {k: w + scale * rng.standard_normal(w.shape)
                 for k, w in sorted(self.weights.items())}
        return NeuralGenerator(noisy, self.image_size, self.latent_dim)

    def _check_latent(self, values) -> None:
        if values.shape != (self.latent_dim,):
            raise ValueError(
                f"neural generator expects latent dim {self.latent_dim}, "
                f"got shape {tuple(values.shape)}"
            )

    def synthesize(self, z: Tensor) -> Tensor:
        return self.synthesize_with_hidden(z)[0]

    def synthesize_with_hidden(self, z: Tensor) -> tuple[Tensor, list[Tensor]]:
        self._check_latent(z.data)
        w = {k: Tensor(v) for k, v in self.weights.items()}
        c0 = self.CHANNELS[0]
        base = self.image_size // 8
        h = ad.leaky_relu(ad.dense(w["dense.w"], z, w["dense.b"]))
        h = ad.reshape(h, (c0, base, base))
        hidden = []
        for k in range(1, 4):
            h = ad.upsample2x(h)
            h = ad.leaky_relu(ad.conv2d(h, w[f"block{k}.w"], w[f"block{k}.b"],
                                        stride=1, padding=1))
            hidden.append(h)
        image = ad.tanh(ad.conv2d(h, w["out.w"], w["out.b"], stride=1, padding=1))
        return image, hidden

    def image(self, values: np.ndarray) -> np.ndarray:
        return self.synthesize(Tensor(np.asarray(values, dtype=np.float64))).data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(sorted(self.weights.items()))


@dataclass(frozen=True)
class GeneratorPair:
    """Source and target generators sharing one latent space."""

    source: object
    target: object
    shared_latent_dim: int = field(default=0)

    def __post_init__(self):
        if self.source.latent_dim != self.target.latent_dim:
            raise ValueError(
                f"pair members disagree on latent dim: "
                f"{self.source.latent_dim} vs {self.target.latent_dim}"
            )
        if self.shared_latent_dim == 0:
            object.__setattr__(self, "shared_latent_dim", self.source.latent_dim)


def make_analytic_pair(image_size: int = 32, swap: bool = False) -> GeneratorPair:
    """Filled-style source and ring-style target (or swapped)."""
    a = AnalyticGenerator("A", image_size)
    b = AnalyticGenerator("B", image_size)
    return GeneratorPair(b, a) if swap else GeneratorPair(a, b)


def make_neural_pair(seed: int, perturbation_scale: float,
                     image_size: int = 32) -> GeneratorPair:
    """Seeded mini-generator plus a weight-perturbed copy of it."""
    if perturbation_scale < 0.0:
        raise ValueError("perturbation scale must be nonnegative")
    source = NeuralGenerator.seeded(seed, image_size=image_size)
    target = source.perturbed(noise_seed=seed + 1_000_003, scale=perturbation_scale)
    return GeneratorPair(source, target)
