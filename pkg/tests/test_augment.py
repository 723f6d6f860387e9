import math

import numpy as np
import pytest

from dualshot_app.errors import InputError
from dualshot_app.geometry import Box, iou
from dualshot_app.services.augment import (
    BRANCH_ANCHOR,
    BRANCH_IDENTITY,
    AugConfig,
    Sample,
    _crop_window,
    anchor_based_sample,
    augment,
    augment_batch,
    choose_branch,
    ssd_style_sample,
    target_scale_choices,
)
from dualshot_app.utils import rng_for

SIZE = 640


def _geometry_sample(faces, size=SIZE):
    return Sample(np.asarray(faces, dtype=np.float64), size, size)


def _rendered_sample(rng, faces, size=96):
    image = rng.uniform(0, 255, size=(3, size, size))
    return Sample(np.asarray(faces, dtype=np.float64), size, size, image)


def _scale(box):
    return math.sqrt(box[2] * box[3])


class TestConfig:

    def test_probability_range(self):
        with pytest.raises(InputError):
            AugConfig(p_anchor_sampling=1.5)

    def test_scale_set_must_increase(self):
        with pytest.raises(InputError):
            AugConfig(anchor_scale_set=(16.0, 16.0, 32.0))


class TestAnchorBasedSampling:

    def test_crop_side_follows_scale_ratio(self):
        cfg = AugConfig(anchor_scale_set=(32.0,))
        src = _geometry_sample([[300.0, 300.0, 40.0, 40.0]])
        out = anchor_based_sample(src, cfg, np.random.default_rng(3))
        assert out.branch == BRANCH_ANCHOR
        # side 40 * 640 / 32 = 800: the face shrinks by 0.8
        assert out.faces.shape == (1, 4)
        assert _scale(out.faces[0]) == pytest.approx(32.0)

    def test_unit_ratio_is_pure_translation(self):
        cfg = AugConfig(anchor_scale_set=(16.0,))
        src = _geometry_sample([[100.0, 200.0, 16.0, 16.0]])
        out = anchor_based_sample(src, cfg, np.random.default_rng(5))
        np.testing.assert_allclose(out.faces[0, 2:], [16.0, 16.0])

    def test_selected_face_lands_on_an_anchor_scale(self, rng):
        cfg = AugConfig()
        for seed in range(50):
            faces = [[rng.uniform(0, 500), rng.uniform(0, 500), *rng.uniform(8, 120, size=2)]]
            out = anchor_based_sample(_geometry_sample(faces), cfg, np.random.default_rng(seed))
            if out.fallback:
                continue
            scale = _scale(out.faces[0])
            assert np.min(np.abs(np.asarray(cfg.anchor_scale_set) - scale)) < 1e-6

    def test_restricted_choices(self):
        cfg = AugConfig()
        np.testing.assert_array_equal(target_scale_choices(40.0, cfg), [16.0, 32.0, 64.0])
        np.testing.assert_array_equal(target_scale_choices(600.0, cfg), cfg.anchor_scale_set)
        free = AugConfig(restrict_scale_choice=False)
        assert len(target_scale_choices(10.0, free)) == 6

    def test_faceless_rejected(self):
        with pytest.raises(InputError):
            anchor_based_sample(_geometry_sample(np.zeros((0, 4))), AugConfig(), np.random.default_rng(0))

    def test_elongated_face_falls_back(self):
        cfg = AugConfig(anchor_scale_set=(512.0,))
        src = _geometry_sample([[10.0, 10.0, 600.0, 20.0]])
        out = anchor_based_sample(src, cfg, np.random.default_rng(0))
        assert out.fallback
        assert out.branch != BRANCH_ANCHOR


class TestSsdStyleSampling:

    def test_identity_branch_keeps_faces(self):
        cfg = AugConfig(flip_prob=0.0)
        faces = [[50.0, 60.0, 30.0, 45.0], [300.0, 200.0, 80.0, 120.0]]
        seen = 0
        for seed in range(60):
            out = ssd_style_sample(_geometry_sample(faces), cfg, np.random.default_rng(seed))
            if out.branch == BRANCH_IDENTITY:
                seen += 1
                np.testing.assert_allclose(out.faces, faces)
        assert seen > 0

    def test_flip_reflects_x(self):
        cfg = AugConfig(flip_prob=1.0)
        faces = np.array([[50.0, 60.0, 30.0, 45.0]])
        for seed in range(60):
            out = ssd_style_sample(_geometry_sample(faces), cfg, np.random.default_rng(seed))
            if out.branch == BRANCH_IDENTITY:
                np.testing.assert_allclose(out.faces, [[SIZE - 50.0 - 30.0, 60.0, 30.0, 45.0]])
                return
        pytest.fail("no identity draw in 60 seeds")

    def test_min_iou_window_respects_bound(self, rng):
        cfg = AugConfig()
        for seed in range(40):
            faces = np.column_stack([rng.uniform(0, 500, size=(3, 2)), rng.uniform(20, 140, size=(3, 2))])
            src = _geometry_sample(faces)
            window = _crop_window(src, cfg, np.random.default_rng(seed), 0.9)
            if window is None:
                continue
            x0, y0, side = window
            kept = 0
            for fx, fy, fw, fh in faces:
                cx, cy = fx + fw / 2, fy + fh / 2
                if not (x0 <= cx < x0 + side and y0 <= cy < y0 + side):
                    continue
                whole = Box(fx - x0, fy - y0, fw, fh)
                clipped_x1, clipped_y1 = max(whole.x, 0.0), max(whole.y, 0.0)
                clipped = Box(clipped_x1, clipped_y1,
                              min(whole.x2, side) - clipped_x1, min(whole.y2, side) - clipped_y1)
                assert iou(clipped, whole) >= 0.9 - 1e-9
                kept += 1
            assert kept >= 1

    def test_outputs_stay_inside_image(self, rng):
        cfg = AugConfig(input_size=96, anchor_scale_set=(16.0, 32.0, 64.0))
        src = _rendered_sample(rng, [[5.0, 10.0, 30.0, 45.0], [60.0, 40.0, 20.0, 30.0]])
        for seed in range(30):
            out = augment(src, cfg, np.random.default_rng(seed))
            assert out.image.shape == (3, 96, 96)
            assert (out.faces[:, :2] >= 0).all()
            assert (out.faces[:, 0] + out.faces[:, 2] <= 96 + 1e-9).all()
            assert (out.faces[:, 1] + out.faces[:, 3] <= 96 + 1e-9).all()
            assert (out.faces[:, 2:] > 0).all()
            assert out.image.min() >= 0.0 and out.image.max() <= 255.0


class TestBranchChoice:

    def test_anchor_branch_frequency(self):
        rng = np.random.default_rng(2024)
        cfg = AugConfig()
        hits = sum(choose_branch(cfg, rng, True) == BRANCH_ANCHOR for _ in range(100_000))
        assert abs(hits / 100_000 - 0.4) <= 0.01

    def test_faceless_input_never_anchor_sampled(self):
        cfg = AugConfig(p_anchor_sampling=1.0)
        src = _geometry_sample(np.zeros((0, 4)))
        for seed in range(20):
            assert augment(src, cfg, np.random.default_rng(seed)).branch != BRANCH_ANCHOR

    def test_iam_off_never_anchor_samples(self):
        cfg = AugConfig(p_anchor_sampling=1.0, use_iam=False)
        rng = np.random.default_rng(0)
        assert all(choose_branch(cfg, rng, True) == "ssd" for _ in range(100))


class TestDeterminism:

    def test_same_stream_same_output(self, rng):
        cfg = AugConfig(input_size=96, anchor_scale_set=(16.0, 32.0, 64.0))
        src = _rendered_sample(rng, [[20.0, 20.0, 24.0, 36.0]])
        a = augment(src, cfg, rng_for(9, 1))
        b = augment(src, cfg, rng_for(9, 1))
        np.testing.assert_array_equal(a.faces, b.faces)
        np.testing.assert_array_equal(a.image, b.image)

    def test_batch_independent_of_threads(self, rng):
        cfg = AugConfig(input_size=96, anchor_scale_set=(16.0, 32.0, 64.0))
        samples = [_rendered_sample(rng, [[10.0 + i, 20.0, 24.0, 36.0]]) for i in range(6)]
        serial = augment_batch(samples, cfg, seed=4, threads=1, epoch=2)
        parallel = augment_batch(samples, cfg, seed=4, threads=3, epoch=2)
        for a, b in zip(serial, parallel):
            assert a.branch == b.branch
            np.testing.assert_array_equal(a.faces, b.faces)
            np.testing.assert_array_equal(a.image, b.image)

    def test_geometry_matches_with_and_without_pixels(self, rng):
        cfg = AugConfig(input_size=96, anchor_scale_set=(16.0, 32.0, 64.0))
        rendered = _rendered_sample(rng, [[20.0, 20.0, 24.0, 36.0], [50.0, 50.0, 16.0, 24.0]])
        bare = Sample(rendered.faces, 96, 96)
        for seed in range(10):
            a = augment(rendered, cfg, rng_for(seed))
            b = augment(bare, cfg, rng_for(seed))
            np.testing.assert_array_equal(a.faces, b.faces)
