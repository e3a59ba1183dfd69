import numpy as np
import pytest

from marf.cameras import Intrinsics, Pose, Ray
from marf.errors import ConfigError
from marf.field import RadianceField
from marf.hashgrid import HashGridConfig
from marf.render import (composite, composite_backward, render_ray,
                         render_rays, render_view, sample_uniform,
                         transmittance)

from oracles import (central_difference, composite_prefix_product,
                     transmittance_prefix)
from synthetic_scene import UNIT_AABB, analytic_field

BLACK = (0.0, 0.0, 0.0)


# --- stratified sampling


def test_sample_single_bin_midpoint():
    batch = sample_uniform(0.0, 1.0, 1)
    assert batch.t[0, 0] == pytest.approx(0.5)
    assert batch.delta[0, 0] == pytest.approx(0.5)


def test_sample_four_bin_centers():
    batch = sample_uniform(0.0, 1.0, 4)
    assert np.allclose(batch.t[0], [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(batch.delta[0], [0.25, 0.25, 0.25, 0.125])


def test_sample_jittered_within_bins(rng):
    t_near = rng.uniform(0, 1, 32)
    t_far = t_near + rng.uniform(0.5, 2, 32)
    count = 16
    batch = sample_uniform(t_near, t_far, count, rng=rng)
    width = (t_far - t_near) / count
    for k in range(count):
        lo = t_near + k * width
        assert np.all(batch.t[:, k] >= lo) and np.all(batch.t[:, k] < lo + width)
    assert np.all(np.diff(batch.t, axis=1) > 0)
    assert np.all(batch.delta > 0)


def test_sample_count_validation():
    with pytest.raises(ConfigError):
        sample_uniform(0.0, 1.0, 0)


# --- transmittance


def test_transmittance_first_sample_is_one(rng):
    sig = rng.uniform(0, 5, (3, 7))
    dlt = rng.uniform(0.01, 0.2, (3, 7))
    trans = transmittance(sig, dlt)
    assert np.all(trans[:, 0] == 1.0)


def test_transmittance_log_two_step():
    trans = transmittance(np.array([[np.log(2.0), 1.0]]), np.array([[1.0, 1.0]]))
    assert trans[0, 1] == pytest.approx(0.5)


def test_transmittance_vacuum_all_ones():
    trans = transmittance(np.zeros((2, 5)), np.full((2, 5), 0.3))
    assert np.all(trans == 1.0)


def test_transmittance_nonincreasing_matches_prefix_oracle(rng):
    sig = rng.uniform(0, 10, (5, 9))
    dlt = rng.uniform(0.01, 0.5, (5, 9))
    trans = transmittance(sig, dlt)
    assert np.all(np.diff(trans, axis=1) <= 1e-15)
    for row in range(5):
        assert np.allclose(trans[row], transmittance_prefix(sig[row], dlt[row]),
                           atol=1e-13)


# --- compositing


def test_composite_empty_samples_is_background():
    color, opacity = composite(np.zeros((2, 0)), np.zeros((2, 0, 3)),
                               np.zeros((2, 0)), (0.2, 0.4, 0.6))
    assert np.allclose(color, [[0.2, 0.4, 0.6]] * 2)
    assert np.all(opacity == 0.0)


def test_composite_zero_density_is_background():
    color, opacity = composite(np.zeros((1, 4)), np.full((1, 4, 3), 0.9),
                               np.full((1, 4), 0.25), (0.1, 0.2, 0.3))
    assert np.allclose(color[0], [0.1, 0.2, 0.3])
    assert opacity[0] == pytest.approx(0.0)


def test_composite_single_sample_half_opacity():
    sig = np.array([[np.log(2.0)]])
    rgb = np.array([[[1.0, 0.0, 0.0]]])
    dlt = np.array([[1.0]])
    color, opacity = composite(sig, rgb, dlt, BLACK)
    assert np.allclose(color[0], [0.5, 0.0, 0.0])
    assert opacity[0] == pytest.approx(0.5)


def test_composite_opaque_first_sample():
    sig = np.array([[50.0, 1.0]])
    rgb = np.array([[[0.3, 0.6, 0.9], [1.0, 1.0, 1.0]]])
    dlt = np.array([[1.0, 1.0]])
    color, opacity = composite(sig, rgb, dlt, BLACK)
    assert np.allclose(color[0], [0.3, 0.6, 0.9], atol=1e-9)
    assert opacity[0] == pytest.approx(1.0, abs=1e-9)


def test_composite_matches_prefix_product_oracle(rng):
    sig = rng.uniform(0, 8, (100, 8))
    dlt = rng.uniform(0.01, 0.4, (100, 8))
    rgb = rng.random((100, 8, 3))
    bg = rng.random(3)
    color, opacity = composite(sig, rgb, dlt, bg)
    for i in range(100):
        ref_color, ref_opacity = composite_prefix_product(sig[i], rgb[i], dlt[i], bg)
        assert np.allclose(color[i], ref_color, atol=1e-12)
        assert abs(opacity[i] - ref_opacity) < 1e-12
    assert np.all(opacity >= 0.0) and np.all(opacity <= 1.0)


def test_composite_invariant_to_vacuum_split(rng):
    sig = rng.uniform(0.1, 5, (1, 4))
    dlt = rng.uniform(0.05, 0.3, (1, 4))
    rgb = rng.random((1, 4, 3))
    bg = (0.3, 0.1, 0.7)
    color_a, opacity_a = composite(sig, rgb, dlt, bg)
    # insert a zero-density sample mid-ray
    sig_b = np.insert(sig, 2, 0.0, axis=1)
    dlt_b = np.insert(dlt, 2, 0.123, axis=1)
    rgb_b = np.insert(rgb, 2, 0.5, axis=1)
    color_b, opacity_b = composite(sig_b, rgb_b, dlt_b, bg)
    assert np.allclose(color_a, color_b, atol=1e-12)
    assert np.allclose(opacity_a, opacity_b, atol=1e-12)


def test_composite_partition_of_unity(rng):
    # all colors equal and the ray fully opaque: output is exactly that color
    sig = np.full((1, 16), 40.0)
    dlt = np.full((1, 16), 0.2)
    rgb = np.full((1, 16, 3), 0.37)
    color, opacity = composite(sig, rgb, dlt, (0.9, 0.9, 0.9))
    assert opacity[0] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(color[0], 0.37, atol=1e-12)


def test_composite_linear_in_colors(rng):
    sig = rng.uniform(0, 4, (6, 5))
    dlt = rng.uniform(0.05, 0.2, (6, 5))
    rgb_a = rng.random((6, 5, 3))
    rgb_b = rng.random((6, 5, 3))
    color_a, _ = composite(sig, rgb_a, dlt, BLACK)
    color_b, _ = composite(sig, rgb_b, dlt, BLACK)
    color_ab, _ = composite(sig, 0.25 * rgb_a + 0.75 * rgb_b, dlt, BLACK)
    assert np.allclose(color_ab, 0.25 * color_a + 0.75 * color_b, atol=1e-12)


def test_composite_backward_finite_differences(rng):
    sig = rng.uniform(0.1, 4, (3, 6))
    dlt = rng.uniform(0.05, 0.3, (3, 6))
    rgb = rng.random((3, 6, 3))
    bg = np.array([0.2, 0.5, 0.1])
    d_color = rng.standard_normal((3, 3))

    def loss():
        color, _ = composite(sig, rgb, dlt, bg)
        return float(np.sum(color * d_color))

    d_sigma, d_rgb = composite_backward(sig, rgb, dlt, bg, d_color)
    fd_sigma = central_difference(loss, sig, h=1e-6)
    fd_rgb = central_difference(loss, rgb, h=1e-6)
    assert np.max(np.abs(d_sigma - fd_sigma)) < 1e-8 * max(1, np.abs(fd_sigma).max())
    assert np.max(np.abs(d_rgb - fd_rgb)) < 1e-8 * max(1, np.abs(fd_rgb).max())


# --- ray and view rendering


def zero_field(dtype=np.float64):
    config = HashGridConfig(levels=2, min_resolution=2, max_resolution=4,
                            table_size=64, features_per_level=2)
    field = RadianceField.create(config, seed=0, hidden=8, geo_features=7,
                                 dtype=dtype)
    field.grid.tables[:] = 0.0
    for _name, arr in field.params.named_arrays():
        arr[:] = 0.0
    return field


def test_render_ray_zero_field_closed_form():
    # sigma = ln 2 and rgb = 0.5 everywhere; with bin centers the integrated
    # optical depth is sigma * (span - width/2)
    field = zero_field()
    ray = Ray(np.array([0.5, 0.5, -1.0]), np.array([0.0, 0.0, 1.0]), 1.0, 2.0)
    count = 64
    color, opacity = render_ray(field.field_fn, ray, count, BLACK,
                                early_stop=False)
    span = ray.t_far - ray.t_near
    width = span / count
    expected_opacity = 1.0 - np.exp(-np.log(2.0) * (span - width / 2.0))
    assert opacity == pytest.approx(expected_opacity, rel=1e-10)
    assert np.allclose(color, 0.5 * expected_opacity, rtol=1e-10)


def test_render_rays_miss_is_background():
    field = zero_field()
    color, opacity = render_rays(field.field_fn, np.array([[2.0, 2.0, 2.0]]),
                                 np.array([[0.0, 0.0, 1.0]]), [0.0], [0.0],
                                 16, (0.3, 0.2, 0.1))
    assert np.allclose(color[0], [0.3, 0.2, 0.1])
    assert opacity[0] == 0.0


def test_render_ray_quadrature_convergence():
    ray = Ray(np.array([0.5, -0.6, 0.5]), np.array([0.0, 1.0, 0.0]),
              0.6, 2.1)
    c64, _ = render_ray(analytic_field, ray, 64, BLACK, early_stop=False)
    c128, _ = render_ray(analytic_field, ray, 128, BLACK, early_stop=False)
    assert np.max(np.abs(c64 - c128)) < 5e-3


def test_render_rays_early_stop_close_to_exact():
    ray = Ray(np.array([0.5, -0.6, 0.5]), np.array([0.0, 1.0, 0.0]), 0.6, 2.1)
    exact, _ = render_ray(analytic_field, ray, 128, BLACK, early_stop=False)
    fast, _ = render_ray(analytic_field, ray, 128, BLACK, early_stop=True)
    assert np.max(np.abs(exact - fast)) < 2e-4


def test_render_view_vacuum_background():
    field = zero_field()
    field_fn = field.field_fn

    def vacuum(points, dirs):
        sigma, rgb = field_fn(points, dirs)
        return np.zeros_like(sigma), rgb

    intr = Intrinsics(fx=2.0, fy=2.0, cx=1.0, cy=1.0, width=2, height=2)
    pose = Pose(np.eye(3), np.array([0.5, 0.5, -2.0]))
    view = render_view(vacuum, intr, pose, UNIT_AABB, count=8,
                       background=(0.25, 0.5, 0.75))
    assert np.allclose(view.image.data,
                       np.tile([0.25, 0.5, 0.75], (2, 2, 1)).astype(np.float32),
                       atol=1e-6)
    assert np.allclose(view.opacity, 0.0, atol=1e-12)


def test_render_view_matches_dense_quadrature_reference():
    from synthetic_scene import default_intrinsics, look_at, reference_render

    intr = default_intrinsics(size=32, focal=35.0)
    pose = look_at((1.3, -0.4, 0.7))
    view = render_view(analytic_field, intr, pose, UNIT_AABB, count=256,
                       early_stop=False)
    reference, _ = reference_render(analytic_field, intr, pose, samples=1024)
    assert np.max(np.abs(view.image.data - reference.data)) <= 2.0 / 255.0


def test_render_view_deterministic_bit_identical():
    intr = Intrinsics(fx=20.0, fy=20.0, cx=8.0, cy=8.0, width=16, height=16)
    pose_origin = np.array([0.5, -1.1, 0.5])
    look = np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
    pose = Pose(look, pose_origin)
    a = render_view(analytic_field, intr, pose, UNIT_AABB, count=32)
    b = render_view(analytic_field, intr, pose, UNIT_AABB, count=32)
    assert np.array_equal(a.image.data, b.image.data)
    assert np.array_equal(a.opacity, b.opacity)
