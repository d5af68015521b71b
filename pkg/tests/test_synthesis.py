"""Synthesis-loop tests: contracts, degenerate modes, frozen world."""

import numpy as np
import pytest

from dualdomain.autodiff import Tape, backward
from dualdomain.features import get_backbone
from dualdomain.generators import make_analytic_pair, make_neural_pair, sample_latent
from dualdomain.losses import crossover_loss, naive_crossover
from dualdomain.segmentation import Mask, segment_analytic
from dualdomain.serialization import weights_bytes
from dualdomain.synthesis import (
    DDSConfig,
    LossWeights,
    NonFiniteLossError,
    run_dds,
)

N = 16


def analytic_setup(z_seed=21, n=N, part="union"):
    pair = make_analytic_pair(n)
    z_star = sample_latent(z_seed, 8)
    y = segment_analytic(z_star, part, n)
    return pair, z_star, (y, y.complement())


def test_zero_iterations_returns_initial_image():
    pair, z_star, masks = analytic_setup()
    config = DDSConfig(max_iterations=0, seed=5)
    record = run_dds(config, pair, z_star, masks)
    assert record.losses.shape == (0, 4)
    expected_init = np.random.default_rng(5).standard_normal(8)
    np.testing.assert_array_equal(record.initial_latent, expected_init)
    np.testing.assert_array_equal(record.final_image, pair.target.image(expected_init))


def test_degenerate_masks_reduce_to_target_reconstruction():
    pair, z_star, _ = analytic_setup(z_seed=31)
    masks = (Mask(np.zeros((N, N))), Mask(np.ones((N, N))))
    config = DDSConfig(max_iterations=500, seed=3)
    record = run_dds(config, pair, z_star, masks)
    x_t = pair.target.image(z_star.values)
    initial_image = pair.target.image(record.initial_latent)
    final_err = float(((record.final_image - x_t) ** 2).mean())
    init_err = float(((initial_image - x_t) ** 2).mean())
    assert final_err < 0.1 * init_err


def test_default_config_halves_loss():
    pair, z_star, masks = analytic_setup(z_seed=41)
    config = DDSConfig(max_iterations=300, seed=7)
    record = run_dds(config, pair, z_star, masks)
    assert record.losses[-1, 3] <= 0.5 * record.losses[0, 3]


def test_loss_rows_and_snapshots():
    pair, z_star, masks = analytic_setup()
    config = DDSConfig(max_iterations=20, seed=1,
                       snapshot_iterations=(0, 10, 20), fid_probe_every=5)
    record = run_dds(config, pair, z_star, masks)
    assert record.losses.shape == (20, 4)
    assert set(record.snapshots) == {0, 10, 20}
    assert set(record.fid_probes) == {0, 5, 10, 15, 20}
    snap_s, snap_t = record.snapshots[0]
    np.testing.assert_array_equal(snap_s, pair.source.image(record.initial_latent))
    np.testing.assert_array_equal(snap_t, pair.target.image(record.initial_latent))
    np.testing.assert_array_equal(record.snapshots[20][1], record.final_image)


def test_run_is_deterministic():
    pair, z_star, masks = analytic_setup()
    config = DDSConfig(max_iterations=25, seed=11)
    a = run_dds(config, pair, z_star, masks)
    b = run_dds(config, pair, z_star, masks)
    np.testing.assert_array_equal(a.losses, b.losses)
    np.testing.assert_array_equal(a.final_latent, b.final_latent)
    np.testing.assert_array_equal(a.final_image, b.final_image)


def test_from_z_star_init_mode():
    pair, z_star, masks = analytic_setup()
    config = DDSConfig(max_iterations=0, seed=2, init_mode="from_z_star")
    record = run_dds(config, pair, z_star, masks)
    np.testing.assert_array_equal(record.initial_latent, z_star.values)


def test_moving_average_loss_is_non_increasing():
    # 50-iteration moving average of the total loss; local oscillation is
    # fine, the smoothed trace must not climb.
    pair, z_star, masks = analytic_setup(z_seed=91)
    record = run_dds(DDSConfig(max_iterations=600, seed=13), pair, z_star, masks)
    total = record.losses[:, 3]
    window = 50
    avg = np.convolve(total, np.ones(window) / window, mode="valid")
    increases = np.diff(avg)
    assert increases.max() <= 1e-12 * max(1.0, avg.max())


def test_crossover_term_stationary_at_z_star():
    # With exactly complementary binary masks the splice term vanishes at the
    # pairing latent and contributes no gradient there.
    pair, z_star, (y_s, y_t_bar) = analytic_setup(z_seed=51)
    x_c = naive_crossover(pair.source.image(z_star.values), y_s,
                          pair.target.image(z_star.values), y_t_bar)
    tape = Tape()
    z = tape.leaf(z_star.values.copy())
    l_c = crossover_loss(z, pair.source, pair.target, y_s, y_t_bar, x_c)
    assert l_c.item() <= 1e-10
    grad = backward(l_c)[z]
    assert np.abs(grad).max() <= 1e-10


def test_frozen_world_weights_unchanged_by_run():
    pair = make_neural_pair(seed=3, perturbation_scale=0.1, image_size=16)
    z_star = sample_latent(6, 32)
    y = Mask((pair.source.image(z_star.values)[0] > 0.0).astype(float))
    backbone = get_backbone("default")
    before = (weights_bytes(pair.source.state_arrays()),
              weights_bytes(pair.target.state_arrays()),
              weights_bytes(backbone.state_arrays()))
    run_dds(DDSConfig(max_iterations=15, seed=4), pair, z_star,
            (y, y.complement()))
    after = (weights_bytes(pair.source.state_arrays()),
             weights_bytes(pair.target.state_arrays()),
             weights_bytes(backbone.state_arrays()))
    assert before == after


def test_unpaired_mode_uses_two_latents():
    pair, z_1, _ = analytic_setup(z_seed=61)
    z_2 = sample_latent(62, 8)
    y_s = segment_analytic(z_1, "union", N)
    y_t = segment_analytic(z_2, "union", N)
    record = run_dds(DDSConfig(max_iterations=5, seed=1), pair, z_1,
                     (y_s, y_t.complement()), z_star_target=z_2)
    np.testing.assert_array_equal(record.x_s, pair.source.image(z_1.values))
    np.testing.assert_array_equal(record.x_t, pair.target.image(z_2.values))


def test_generator_feature_source_runs_and_differs():
    pair, z_star, masks = analytic_setup(z_seed=71)
    base = run_dds(DDSConfig(max_iterations=40, seed=9), pair, z_star, masks)
    alt = run_dds(DDSConfig(max_iterations=40, seed=9,
                            feature_source="generator"), pair, z_star, masks)
    assert float(np.abs(base.final_image - alt.final_image).mean()) > 0.0


def test_backbone_choice_changes_outcome():
    pair, z_star, masks = analytic_setup(z_seed=81)
    a = run_dds(DDSConfig(max_iterations=40, seed=10, backbone="default"),
                pair, z_star, masks)
    b = run_dds(DDSConfig(max_iterations=40, seed=10, backbone="shallow_wide"),
                pair, z_star, masks)
    assert not np.array_equal(a.final_image, b.final_image)
    assert not np.array_equal(a.losses, b.losses)


def test_non_finite_loss_aborts_with_iteration_and_components(monkeypatch):
    pair, z_star, masks = analytic_setup()
    calls = {"n": 0}
    import dualdomain.synthesis as synthesis_module

    original = synthesis_module.crossover_distance

    def poisoned(s_c, x_c, norm="mse"):
        calls["n"] += 1
        result = original(s_c, x_c, norm)
        if calls["n"] >= 3:
            result.data = np.array(np.inf)
        return result

    monkeypatch.setattr(synthesis_module, "crossover_distance", poisoned)
    with pytest.raises(NonFiniteLossError) as err:
        run_dds(DDSConfig(max_iterations=10, seed=1), pair, z_star, masks)
    assert err.value.iteration == 3
    assert not np.isfinite(err.value.components["total"])
    assert "iteration 3" in str(err.value)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        DDSConfig(max_iterations=-1)
    with pytest.raises(ValueError):
        DDSConfig(lr=0.0)
    with pytest.raises(ValueError):
        DDSConfig(feature_source="vgg")
    with pytest.raises(ValueError):
        DDSConfig(init_mode="zeros")


def test_loss_weights_defaults_match_published_values():
    weights = LossWeights()
    assert (weights.alpha, weights.beta, weights.gamma) == (0.9, 1.0, 0.5)
    config = DDSConfig()
    assert config.lr == 0.01
    assert config.max_iterations == 1000
