import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from outpaintsynth import _rng
from outpaintsynth.compose import (
    CHANNEL_PERMUTATIONS, CanvasComposer, PlacementSpec, UnplaceableSeedError, annotation_box, compose_canvas,
    derive_annotation, invert_mask, mask_sigma, permute_channels, render_mask, sample_placement, scale_bounds,
)
from outpaintsynth.geometry import BufferSpec

from conftest import make_seed


class MaxRng(np.random.Generator):
    """Generator returning the top of every range."""

    def __init__(self):
        super().__init__(np.random.PCG64(0))

    def uniform(self, low=0.0, high=1.0, size=None):
        return high

    def integers(self, low, high=None, *args, **kwargs):
        return (high - 1) if high is not None else low - 1


class TestSamplePlacement:
    def test_full_canvas_seed(self):
        seed = make_seed(512, 512)
        s_min, s_max = scale_bounds(seed)
        assert s_max == 1.0
        assert s_min == pytest.approx(32 * 1.15 / 512)
        p = sample_placement(seed, 512, MaxRng())
        assert p.scale == 1.0 and p.top_left == (0, 0)
        for k in range(50):
            q = sample_placement(seed, 512, _rng.stream(1, k))
            assert q.scale <= 1.0
            assert q.top_left[0] + q.scale * 512 <= 512 + 1e-9

    def test_deterministic_for_fixed_stream(self):
        seed = make_seed(230, 180)
        a = sample_placement(seed, 512, _rng.stream(7, "s0", 0))
        b = sample_placement(seed, 512, _rng.stream(7, "s0", 0))
        assert a == b

    def test_position_marginals_uniform(self):
        seed = make_seed(230, 230)
        rng = np.random.default_rng(123)
        jitter = np.random.default_rng(9)
        u = []
        for _ in range(10_000):
            p = sample_placement(seed, 512, rng)
            span = int(np.ceil(p.scale * 230 - 1e-9))
            n_pos = 512 - span + 1
            # randomized PIT: exactly U(0,1) when the position is uniform over n_pos values
            u.append((p.top_left[0] + jitter.uniform()) / n_pos)
        counts, _ = np.histogram(u, bins=10, range=(0, 1))
        sigma = np.sqrt(10_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 1000) <= 3 * sigma), counts

    def test_unplaceable(self):
        seed = make_seed(600, 30, buffer=BufferSpec(1.15, (0.075, 0, 0.075, 0)))
        with pytest.raises(UnplaceableSeedError):
            sample_placement(seed, 512, 0)

    def test_channel_permutation_uniform(self):
        seed = make_seed(100, 100)
        rng = np.random.default_rng(5)
        seen = [sample_placement(seed, 512, rng).channel_perm for _ in range(600)]
        assert set(seen) == set(CHANNEL_PERMUTATIONS)


class TestPermuteChannels:
    def test_identity(self):
        img = np.random.default_rng(0).integers(0, 256, (8, 9, 3), dtype=np.uint8)
        assert np.array_equal(permute_channels(img, (0, 1, 2)), img)

    def test_equal_channel_pixels_unchanged(self):
        g = np.random.default_rng(1).integers(0, 256, (6, 6), dtype=np.uint8)
        img = np.stack([g, g, g], axis=-1)
        img[0, 0] = 0
        img[0, 1] = 255
        for perm in CHANNEL_PERMUTATIONS:
            assert np.array_equal(permute_channels(img, perm), img)

    def test_three_cycle(self):
        img = np.random.default_rng(2).integers(0, 256, (5, 4, 3), dtype=np.uint8)
        out = img
        for _ in range(3):
            out = permute_channels(out, (2, 0, 1))
        assert np.array_equal(out, img)
        assert np.array_equal(permute_channels(img, (2, 0, 1))[..., 0], img[..., 2])

    def test_rejects_non_rgb(self):
        with pytest.raises(ValueError):
            permute_channels(np.zeros((4, 4)), (0, 1, 2))
        with pytest.raises(ValueError):
            permute_channels(np.zeros((4, 4, 4)), (0, 1, 2))


class TestComposeCanvas:
    def test_exact_paste_at_origin(self):
        seed = make_seed(115, 80)
        p = PlacementSpec(512, 1.0, (0, 0), (1, 2, 0))
        b = compose_canvas(seed, p)
        assert np.array_equal(b.canvas[:80, :115], seed.crop_image[:, :, [1, 2, 0]])

    def test_fill_region_only_fill_value(self):
        seed = make_seed(115, 115)
        p = PlacementSpec(512, 1.5, (200, 100), (0, 1, 2))
        b = compose_canvas(seed, p, fill_value=128)
        pw, ph = p.pasted_size(115, 115)
        outside = np.ones((512, 512), bool)
        outside[100:100 + ph, 200:200 + pw] = False
        assert np.unique(b.canvas[outside]).tolist() == [128]

    def test_pasted_mean_brightness(self):
        seed = make_seed(160, 120)
        b = compose_canvas(seed, PlacementSpec(512, 1.0, (30, 40)))
        pasted = b.canvas[40:160, 30:190].astype(float)
        assert abs(pasted.mean() - seed.crop_image.astype(float).mean()) <= 1 / 255

    def test_placement_mismatch(self):
        seed = make_seed(300, 300)
        with pytest.raises(ValueError):
            compose_canvas(seed, PlacementSpec(512, 1.0, (300, 0)))


class TestDeriveAnnotation:
    def test_example(self):
        seed = make_seed(115, 115)
        ann = derive_annotation(seed, PlacementSpec(512, 1.0, (100, 100)))
        # inner 100x100 box at (107.5, 107.5)
        expected = ((107.5 + 50) / 512, (107.5 + 50) / 512, 100 / 512, 100 / 512)
        assert (ann.cx, ann.cy, ann.w, ann.h) == pytest.approx(expected, abs=1e-12)
        assert (ann.cx, ann.cy, ann.w, ann.h) == pytest.approx((0.307617, 0.307617, 0.195313, 0.195313), abs=1e-6)
        assert ann.class_id == seed.class_id

    def test_scale_doubles_size(self):
        seed = make_seed(115, 115)
        a1 = derive_annotation(seed, PlacementSpec(512, 1.0, (10, 10)))
        a2 = derive_annotation(seed, PlacementSpec(512, 2.0, (10, 10)))
        assert a2.w == pytest.approx(2 * a1.w, abs=1e-15)
        assert a2.h == pytest.approx(2 * a1.h, abs=1e-15)

    def test_denormalize_round_trip(self):
        seed = make_seed(140, 90, buffer=BufferSpec(1.15, (0, 0.075, 0.075, 0)))
        p = PlacementSpec(512, 1.3, (77, 150))
        ann = derive_annotation(seed, p)
        box = ann.to_box(512, 512)
        assert np.allclose(box.as_tuple(), annotation_box(seed, p).as_tuple(), atol=1e-9)


class TestRenderMask:
    def test_hard_mask_when_no_blur(self):
        seed = make_seed(115, 115)
        p = PlacementSpec(512, 1.0, (100, 100))
        m = render_mask(seed, p, blur_sigma_fraction=0)
        assert set(np.unique(m).tolist()) == {0, 255}
        assert (m == 0).sum() == 115 * 115
        assert m[100:215, 100:215].max() == 0

    def test_center_and_corner(self):
        seed = make_seed(115, 115)
        p = PlacementSpec(512, 1.0, (100, 100))
        m = render_mask(seed, p)
        assert m[157, 157] == 0
        assert m[0, 0] == 255 and m[511, 511] == 255

    def test_blur_in_buffer_band(self):
        seed = make_seed(230, 230)
        p = PlacementSpec(512, 1.0, (100, 100))
        m = render_mask(seed, p)
        assert mask_sigma(seed, p) == pytest.approx(0.5 * 15)
        band = m[215, 101:114]  # left buffer margin, mid-height
        assert 0 < band.max() < 255

    def test_zero_buffer_falls_back_to_two_px(self):
        seed = make_seed(100, 100, buffer=BufferSpec(1.15, (0, 0, 0, 0)))
        assert mask_sigma(seed, PlacementSpec(512, 1.0, (10, 10))) == 2.0

    def test_invert(self):
        m = np.array([[0, 255, 10]], np.uint8)
        assert invert_mask(m).tolist() == [[255, 0, 245]]


def random_seed_strategy():
    fr = st.sampled_from([0.0, 0.075, 0.03])
    return st.builds(
        lambda w, h, l, t, r, b: make_seed(w, h, buffer=BufferSpec(1.15, (l, t, r, b))),
        st.floats(40, 400), st.floats(40, 400), fr, fr, fr, fr,
    )


@settings(max_examples=60, deadline=None)
@given(random_seed_strategy(), st.integers(0, 10**6))
def test_bundle_invariants(seed, k):
    p = sample_placement(seed, 512, _rng.stream(3, k))
    b = compose_canvas(seed, p)
    ann = b.inner_box
    # whole inner object box preserved
    x0, y0, x1, y1 = (int(np.floor(ann.x_min)), int(np.floor(ann.y_min)), int(np.ceil(ann.x_max)), int(np.ceil(ann.y_max)))
    assert b.mask[y0:y1, x0:x1].max() == 0
    pw, ph = p.pasted_size(seed.crop_width, seed.crop_height)
    tx, ty = p.top_left
    assert tx - 1e-9 <= ann.x_min and ann.x_max <= tx + max(pw, p.scale * seed.crop_width) + 1e-9
    assert ty - 1e-9 <= ann.y_min and ann.y_max <= ty + max(ph, p.scale * seed.crop_height) + 1e-9
    assert 0 <= tx and tx + pw <= 512 and 0 <= ty and ty + ph <= 512
    a = b.annotation
    assert 0 <= a.cx - a.w / 2 and a.cx + a.w / 2 <= 1 + 1e-9
    # 255 beyond the 3-sigma dilated buffered rectangle
    sigma = mask_sigma(seed, p)
    reach = int(np.ceil(3 * sigma)) + 1
    outside = np.ones((512, 512), bool)
    outside[max(ty - reach, 0):ty + ph + reach, max(tx - reach, 0):tx + pw + reach] = False
    assert np.all(b.mask[outside] == 255)


@settings(max_examples=40, deadline=None)
@given(random_seed_strategy(), st.integers(0, 10**6), st.floats(0, 2 * np.pi))
def test_mask_monotone_along_rays(seed, k, angle):
    p = sample_placement(seed, 512, _rng.stream(5, k))
    m = render_mask(seed, p).astype(int)
    box = annotation_box(seed, p)
    cx, cy = box.center
    dx, dy = np.cos(angle), np.sin(angle)
    # leave the inner box along the ray, then walk outward
    t_exit = min(
        (box.width / 2) / abs(dx) if abs(dx) > 1e-12 else np.inf,
        (box.height / 2) / abs(dy) if abs(dy) > 1e-12 else np.inf,
    )
    ts = t_exit + np.arange(0, 800, 0.5)
    xs, ys = cx + ts * dx, cy + ts * dy
    keep = (xs >= 0) & (xs < 512) & (ys >= 0) & (ys < 512)
    vals = m[ys[keep].astype(int), xs[keep].astype(int)]
    # pixel snapping can step back by one sample at most by a rounding unit
    assert np.all(np.diff(vals) >= -1), vals


class TestComposer:
    def test_transform_is_reproducible(self):
        seeds = [make_seed(120 + i, 90, seed_id=f"s{i}", raster_seed=i) for i in range(4)]
        comp = CanvasComposer(random_state=11, images_per_seed=2).fit(seeds)
        a = comp.transform(seeds)
        b = clone(comp).fit(seeds).transform(list(reversed(seeds)))
        assert len(a) == 8
        by_stem = {x.stem: x for x in b}
        for x in a:
            y = by_stem[x.stem]
            assert x.canvas.tobytes() == y.canvas.tobytes()
            assert x.mask.tobytes() == y.mask.tobytes()
            assert x.annotation == y.annotation

    def test_params_and_validation(self):
        comp = CanvasComposer(canvas_size=256)
        assert comp.get_params()["canvas_size"] == 256
        with pytest.raises(ValueError):
            CanvasComposer(images_per_seed=0).fit([])
        with pytest.raises(TypeError):
            CanvasComposer().fit(["not a seed"])
