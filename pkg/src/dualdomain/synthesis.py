"""Latent-space search for an image that blends two generator domains.

One run fixes a latent z*, renders the paired source/target images and the
cut-and-paste crossover, then optimises a fresh latent with Adam against
three terms: masked source reconstruction, complement-masked target
reconstruction, and a splice-consistency term. Only the searched latent is
ever updated; generators and feature weights stay frozen throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward
from .features import FeatureStack, extract_features, get_backbone
from .losses import (
    crossover_distance,
    mask_feature_stack,
    masked_feature_distance,
    naive_crossover,
    splice,
)
from .generators import GeneratorPair, LatentCode
from .optim import AdamState, adam_step
from .segmentation import Mask, build_mask_pyramid
from . import autodiff as ad


@dataclass(frozen=True)
class LossWeights:
    """Weights for the source, target and crossover terms."""

    alpha: float = 0.9
    beta: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0.0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class DDSConfig:
    """Everything one synthesis run needs besides the generators and masks."""

    weights: LossWeights = LossWeights()
    lr: float = 0.01
    max_iterations: int = 1000
    backbone: str = "default"
    feature_source: str = "backbone"  # "backbone" | "generator"
    init_mode: str = "random"  # "random" | "from_z_star"
    snapshot_iterations: tuple[int, ...] = ()
    fid_probe_every: int | None = None
    crossover_norm: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.feature_source not in ("backbone", "generator"):
            raise ValueError(f"unknown feature source {self.feature_source!r}")
        if self.init_mode not in ("random", "from_z_star"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")


@dataclass
class RunRecord:
    """Full trace of one run."""

    losses: np.ndarray  # (iterations, 4): L_s, L_t, L_c, total
    snapshots: dict[int, tuple[np.ndarray, np.ndarray]]
    fid_probes: dict[int, np.ndarray]
    initial_latent: np.ndarray
    final_latent: np.ndarray
    final_image: np.ndarray
    x_s: np.ndarray
    x_t: np.ndarray
    x_c: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class NonFiniteLossError(RuntimeError):
    """Loss became NaN/inf; carries the iteration and component values."""

    def __init__(self, iteration: int, components: dict[str, float]):
        self.iteration = iteration
        self.components = components
        parts = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at iteration {iteration}: {parts}")


def _mask3(mask: Mask, channels: int) -> np.ndarray:
    return np.broadcast_to(mask.grid, (channels,) + mask.grid.shape).copy()


class _FeaturePlumbing:
    """Precomputed reference activations and pyramids for the hot loop."""

    def __init__(self, config: DDSConfig, pair: GeneratorPair,
                 z_star_s: np.ndarray, z_star_t: np.ndarray,
                 y_s: Mask, y_t_bar: Mask):
        self.mode = config.feature_source
        if self.mode == "backbone":
            self.backbone = get_backbone(config.backbone)
            n = pair.source.image_size
            shapes = self.backbone.layer_shapes(n)
            ref_s = extract_features(self.backbone, Tensor(pair.source.image(z_star_s)))
            ref_t = extract_features(self.backbone, Tensor(pair.target.image(z_star_t)))
            shapes_s = shapes_t = shapes
        else:
            self.backbone = None
            ref_s = _hidden_stack(pair.source, z_star_s)
            ref_t = _hidden_stack(pair.target, z_star_t)
            shapes_s = [t.shape for t in ref_s.layers]
            shapes_t = [t.shape for t in ref_t.layers]
        self.pyr_s = build_mask_pyramid(y_s, shapes_s)
        self.pyr_t = build_mask_pyramid(y_t_bar, shapes_t)
        self.ref_masked_s = mask_feature_stack(ref_s, self.pyr_s)
        self.ref_masked_t = mask_feature_stack(ref_t, self.pyr_t)

    def current(self, pair: GeneratorPair, z: Tensor):
        """Generator outputs and feature stacks at the current latent."""
        if self.mode == "backbone":
            g_s = pair.source.synthesize(z)
            g_t = pair.target.synthesize(z)
            stack_s = extract_features(self.backbone, g_s)
            stack_t = extract_features(self.backbone, g_t)
        else:
            g_s, hid_s = pair.source.synthesize_with_hidden(z)
            g_t, hid_t = pair.target.synthesize_with_hidden(z)
            stack_s = FeatureStack(tuple(hid_s), tuple(t.size for t in hid_s))
            stack_t = FeatureStack(tuple(hid_t), tuple(t.size for t in hid_t))
        return g_s, g_t, stack_s, stack_t


def _hidden_stack(generator, z_values: np.ndarray) -> FeatureStack:
    _, hidden = generator.synthesize_with_hidden(Tensor(z_values))
    return FeatureStack(tuple(hidden), tuple(t.size for t in hidden))


def initial_latent(config: DDSConfig, z_star: LatentCode) -> np.ndarray:
    if config.init_mode == "from_z_star":
        return z_star.values.copy()
    return np.random.default_rng(config.seed).standard_normal(z_star.dim)


def run_dds(config: DDSConfig, pair: GeneratorPair, z_star: LatentCode,
            masks: tuple[Mask, Mask],
            z_star_target: LatentCode | None = None) -> RunRecord:
    """Execute the full synthesis loop and return its trace.

    `masks` is the source part mask and the complement of the target part
    mask. Passing `z_star_target` runs the unpaired variant where the two
    reference images come from different latents.
    """
    y_s, y_t_bar = masks
    z_t = z_star_target if z_star_target is not None else z_star
    x_s = pair.source.image(z_star.values)
    x_t = pair.target.image(z_t.values)
    x_c = naive_crossover(x_s, y_s, x_t, y_t_bar)

    plumbing = _FeaturePlumbing(config, pair, z_star.values, z_t.values, y_s, y_t_bar)
    channels = x_s.shape[0]
    y_s3 = _mask3(y_s, channels)
    y_t_bar3 = _mask3(y_t_bar, channels)
    xs_masked = x_s * y_s3
    xt_masked = x_t * y_t_bar3

    z_hat = initial_latent(config, z_star)
    init_latent = z_hat.copy()
    adam = AdamState.fresh(z_hat.shape)
    weights = config.weights

    total_iters = config.max_iterations
    snapshot_at = set(config.snapshot_iterations)
    probe_at: set[int] = set()
    if config.fid_probe_every:
        probe_at = set(range(0, total_iters + 1, config.fid_probe_every))
        probe_at.add(total_iters)

    losses = np.zeros((total_iters, 4))
    snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    fid_probes: dict[int, np.ndarray] = {}

    for i in range(1, total_iters + 1):
        state = i - 1  # completed updates behind the images of this iteration
        tape = Tape()
        z = tape.leaf(z_hat, name="z_hat")
        g_s, g_t, stack_s, stack_t = plumbing.current(pair, z)

        l_s = masked_feature_distance(stack_s, plumbing.ref_masked_s, plumbing.pyr_s) \
            + ad.msq(ad.mul(g_s, Tensor(y_s3)) - Tensor(xs_masked))
        l_t = masked_feature_distance(stack_t, plumbing.ref_masked_t, plumbing.pyr_t) \
            + ad.msq(ad.mul(g_t, Tensor(y_t_bar3)) - Tensor(xt_masked))
        s_c = splice(g_s, y_s, g_t, y_t_bar)
        l_c = crossover_distance(s_c, x_c, config.crossover_norm)
        total = ad.mul(l_s, weights.alpha) + ad.mul(l_t, weights.beta) \
            + ad.mul(l_c, weights.gamma)

        row = (l_s.item(), l_t.item(), l_c.item(), total.item())
        if not all(np.isfinite(row)):
            raise NonFiniteLossError(
                i, {"L_s": row[0], "L_t": row[1], "L_c": row[2], "total": row[3]})
        losses[i - 1] = row

        if state in snapshot_at:
            snapshots[state] = (g_s.data.copy(), g_t.data.copy())
        if state in probe_at:
            fid_probes[state] = g_t.data.copy()

        grads = backward(total)
        z_hat, adam = adam_step(z_hat, grads[z], adam, config.lr)

    final_image = pair.target.image(z_hat)
    if total_iters in snapshot_at:
        snapshots[total_iters] = (pair.source.image(z_hat), final_image.copy())
    if total_iters in probe_at:
        fid_probes[total_iters] = final_image.copy()

    return RunRecord(
        losses=losses,
        snapshots=snapshots,
        fid_probes=fid_probes,
        initial_latent=init_latent,
        final_latent=z_hat,
        final_image=final_image,
        x_s=x_s,
        x_t=x_t,
        x_c=x_c,
    )
