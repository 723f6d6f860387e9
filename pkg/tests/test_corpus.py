import math

import numpy as np
import pytest

from dualshot_app.errors import InputError
from dualshot_app.services.corpus import FACE_ASPECT, corpus_mean, face_size, synth_corpus

# chi-square critical value, 5 degrees of freedom, p = 0.01
CHI2_CRIT_DF5 = 15.086


class TestSynthCorpus:

    def test_faces_inside_image_with_fixed_aspect(self):
        corpus = synth_corpus(100, faces_per_image=(1, 5), seed=3, render=False)
        assert len(corpus) == 100
        for sample in corpus:
            faces = sample.faces
            assert 1 <= faces.shape[0] <= 5
            assert (faces[:, :2] >= 0).all()
            assert (faces[:, 0] + faces[:, 2] <= sample.width + 1e-9).all()
            assert (faces[:, 1] + faces[:, 3] <= sample.height + 1e-9).all()
            np.testing.assert_allclose(faces[:, 3] / faces[:, 2], FACE_ASPECT)

    def test_scales_are_log_uniform(self):
        corpus = synth_corpus(300, faces_per_image=(1, 5), scale_range=(8.0, 512.0), seed=11, render=False)
        faces = np.concatenate([s.faces for s in corpus])
        log_scales = np.log2(np.sqrt(faces[:, 2] * faces[:, 3]))
        observed, _ = np.histogram(log_scales, bins=6, range=(3.0, 9.0))
        expected = observed.sum() / 6.0
        chi2 = float(((observed - expected) ** 2 / expected).sum())
        assert chi2 < CHI2_CRIT_DF5

    def test_same_seed_same_corpus(self):
        a = synth_corpus(4, seed=5, input_size=64, scale_range=(8.0, 32.0))
        b = synth_corpus(4, seed=5, input_size=64, scale_range=(8.0, 32.0))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.faces, y.faces)
            np.testing.assert_array_equal(x.image, y.image)

    def test_prefix_stable_and_render_independent(self):
        small = synth_corpus(3, seed=2, input_size=64, scale_range=(8.0, 32.0), render=False)
        large = synth_corpus(6, seed=2, input_size=64, scale_range=(8.0, 32.0))
        for x, y in zip(small, large):
            np.testing.assert_array_equal(x.faces, y.faces)
            assert x.image is None and y.image.shape == (3, 64, 64)

    def test_faces_are_painted_brighter_than_background(self):
        sample = synth_corpus(1, faces_per_image=(1, 1), seed=0, input_size=64,
                              scale_range=(20.0, 20.0), channels=1)[0]
        x, y, w, h = sample.faces[0]
        patch = sample.image[0, int(round(y)):int(round(y + h)), int(round(x)):int(round(x + w))]
        assert patch.min() >= 180.0

    def test_validation(self):
        with pytest.raises(InputError):
            synth_corpus(0)
        with pytest.raises(InputError):
            synth_corpus(2, faces_per_image=(3, 1))
        with pytest.raises(InputError):
            synth_corpus(2, scale_range=(0.0, 10.0))


def test_face_size_keeps_scale():
    w, h = face_size(40.0)
    assert math.sqrt(w * h) == pytest.approx(40.0)
    assert h / w == pytest.approx(FACE_ASPECT)


def test_corpus_mean_needs_pixels():
    samples = synth_corpus(2, seed=1, input_size=64, scale_range=(8.0, 16.0))
    mean = corpus_mean(samples)
    assert len(mean) == 3 and all(0.0 < m < 255.0 for m in mean)
    with pytest.raises(InputError):
        corpus_mean(synth_corpus(2, seed=1, input_size=64, scale_range=(8.0, 16.0), render=False))
