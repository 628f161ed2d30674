import numpy as np
import pytest

from bmdkit.bm_algebra import bmp
from bmdkit.errors import DimensionError, ParameterError
from bmdkit.generative_model import (
    ObjectSpec,
    OverlapWarning,
    color_two_object_scenario,
    linear_trajectory,
    synth_video,
    synthetic_background,
    two_object_scenario,
)


def painted(background, objects, p):
    """Oracle: paint each rectangle pixel by pixel onto copies of the background."""
    m, n = background.shape
    X = np.empty((m, p, n))
    for j in range(p):
        frame = background.copy()
        for obj in objects:
            r, c = obj.trajectory[j]
            for di in range(obj.size[0]):
                for dk in range(obj.size[1]):
                    frame[r + di, c + dk] = obj.intensity
        X[:, j, :] = frame
    return X


@pytest.fixture
def bg():
    return synthetic_background("perlin", 16, 18, seed=4)


class TestSynthVideo:
    def test_single_object_exact(self, bg):
        obj = ObjectSpec(200.0, (3, 4), linear_trajectory((2, 1), (1, 1), 9))
        v = synth_video(bg, [obj])
        assert v.rank == 2
        assert np.array_equal(v.X, painted(bg, [obj], 9))
        assert np.array_equal(bmp(v.factors), v.X)

    def test_mask_identity(self, bg):
        obj = ObjectSpec(50.0, (2, 3), linear_trajectory((5, 2), (0, 2), 6))
        v = synth_video(bg, [obj])
        for j in range(6):
            b = obj.row_mask(j, 16)
            c = obj.col_mask(j, 18)
            ref = bg - np.diag(b) @ bg @ np.diag(c) + 50.0 * np.outer(b, c)
            assert np.allclose(v.X[:, j, :], ref, atol=1e-12)

    def test_no_objects(self, bg):
        v = synth_video(bg, [], p=4)
        assert v.rank == 1
        assert np.array_equal(v.X, np.repeat(bg[:, None, :], 4, axis=1))
        assert np.all(v.foreground == 0)

    def test_two_objects_three_terms(self, bg):
        o1 = ObjectSpec(85.0, (3, 3), linear_trajectory((0, 0), (0, 1), 8))
        o2 = ObjectSpec(15.0, (2, 2), linear_trajectory((12, 15), (0, -1), 8))
        v = synth_video(bg, [o1, o2])
        assert v.rank == 3 and not v.overlap
        assert np.allclose(bmp(v.factors), painted(bg, [o1, o2], 8), atol=1e-12)

    def test_merge_equal_intensity_same_rows(self, bg):
        o1 = ObjectSpec(60.0, (3, 2), linear_trajectory((4, 0), (0, 1), 7))
        o2 = ObjectSpec(60.0, (3, 2), linear_trajectory((4, 14), (0, -1), 7))
        v = synth_video(bg, [o1, o2])
        assert v.rank == 2
        assert np.allclose(bmp(v.factors), painted(bg, [o1, o2], 7), atol=1e-12)

    def test_overlap(self, bg):
        o1 = ObjectSpec(10.0, (4, 4), [(3, 3)] * 3)
        o2 = ObjectSpec(90.0, (4, 4), [(5, 5)] * 3)
        with pytest.warns(OverlapWarning):
            v = synth_video(bg, [o1, o2])
        assert v.overlap
        assert np.array_equal(v.X, painted(bg, [o1, o2], 3))

    def test_too_many_objects(self, bg):
        o = ObjectSpec(1.0, (1, 1), [(0, 0)])
        with pytest.raises(ParameterError):
            synth_video(bg, [o, o, o])

    def test_out_of_bounds(self, bg):
        with pytest.raises(ParameterError):
            synth_video(bg, [ObjectSpec(1.0, (3, 3), [(15, 0)])])
        with pytest.raises(ParameterError):
            synth_video(bg, [ObjectSpec(1.0, (1, 1), [(0, 0)])], p=2)

    def test_bad_background(self):
        with pytest.raises(DimensionError):
            synth_video(np.ones(5), [], p=2)

    def test_background_split(self, bg):
        obj = ObjectSpec(200.0, (3, 4), linear_trajectory((2, 1), (1, 1), 9))
        v = synth_video(bg, [obj])
        assert np.array_equal(v.background + v.foreground, v.X)
        assert np.array_equal(v.background[:, 4, :], bg)


class TestBackgrounds:
    @pytest.mark.parametrize("kind", ["constant", "gradient", "perlin"])
    def test_range(self, kind):
        img = synthetic_background(kind, 20, 30, seed=1)
        assert img.shape == (20, 30)
        assert img.min() >= 0 and img.max() <= 255

    def test_gradient_rows(self):
        img = synthetic_background("gradient", 6, 3)
        assert np.allclose(img[:, 0], np.linspace(0, 255, 6))
        assert np.all(img == img[:, :1])

    def test_perlin_seeded(self):
        a = synthetic_background("perlin", 25, 25, seed=9)
        assert np.array_equal(a, synthetic_background("perlin", 25, 25, seed=9))
        assert not np.array_equal(a, synthetic_background("perlin", 25, 25, seed=10))
        assert a.min() == 0 and a.max() == 255

    def test_unknown(self):
        with pytest.raises(ParameterError):
            synthetic_background("plaid", 4, 4)


class TestScenarios:
    def test_two_object(self):
        v = two_object_scenario()
        assert v.X.shape == (50, 30, 50) and v.rank == 3
        assert [o.intensity for o in v.objects] == [85.0, 15.0]
        assert not v.overlap
        assert np.allclose(v.X, painted(v.background_image, v.objects, 30), atol=1e-12)
        # the two objects travel in different directions
        r1 = [r for r, _ in v.objects[0].trajectory]
        r2 = [r for r, _ in v.objects[1].trajectory]
        assert r1[-1] > r1[0] and r2[-1] < r2[0]

    def test_color(self):
        X, videos = color_two_object_scenario(m=20, n=20, p=8, q=3)
        assert X.shape == (20, 8, 20, 3)
        for z, v in enumerate(videos):
            assert np.array_equal(X[..., z], v.X)
