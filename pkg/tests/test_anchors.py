import io

import numpy as np
import pytest

from dualshot_app.anchors import (
    Shot,
    build_grid,
    default_level_specs,
    dump_csv,
    shot_anchors,
    total_anchor_count,
)
from dualshot_app.errors import InputError


class TestLevelSpecs:

    def test_full_size_layout(self):
        specs = default_level_specs(640)
        assert [s.map_h for s in specs] == [160, 80, 40, 20, 10, 5]
        assert [s.count for s in specs] == [25600, 6400, 1600, 400, 100, 25]
        assert [s.stride for s in specs] == [4, 8, 16, 32, 64, 128]
        assert [s.scale_first_shot for s in specs] == [8, 16, 32, 64, 128, 256]
        assert all(s.scale_first_shot == s.scale_second_shot / 2 for s in specs)

    def test_small_input(self):
        assert [s.map_h for s in default_level_specs(128)] == [32, 16, 8, 4, 2, 1]

    def test_toy_input_uses_ceil(self):
        assert [s.map_h for s in default_level_specs(160, strict=False)] == [40, 20, 10, 5, 3, 2]

    def test_strict_divisibility(self):
        with pytest.raises(InputError):
            default_level_specs(160)
        with pytest.raises(InputError):
            default_level_specs(100, strict=False)


class TestGrid:

    def test_top_level_second_shot(self):
        grid = build_grid(default_level_specs(640)[5], Shot.SECOND, ratio_mode="width")
        assert len(grid) == 25
        np.testing.assert_array_equal(grid.boxes[:, 2:], np.tile([512.0, 768.0], (25, 1)))

    def test_first_cell(self):
        grid = build_grid(default_level_specs(640)[0], Shot.SECOND, ratio_mode="width")
        np.testing.assert_array_equal(grid.boxes[0], [-6.0, -10.0, 16.0, 24.0])

    def test_centers(self):
        spec = default_level_specs(640)[2]
        boxes = build_grid(spec, Shot.SECOND, ratio_mode="width").boxes
        i, j = 3, 7
        x, y, w, h = boxes[i * spec.map_w + j]
        assert (x + w / 2, y + h / 2) == ((j + 0.5) * spec.stride, (i + 0.5) * spec.stride)

    def test_shots_differ_by_half_size(self):
        spec = default_level_specs(640)[1]
        first = build_grid(spec, Shot.FIRST, ratio_mode="width").boxes
        second = build_grid(spec, Shot.SECOND, ratio_mode="width").boxes
        np.testing.assert_allclose(first[:, :2] + first[:, 2:] / 2, second[:, :2] + second[:, 2:] / 2)
        np.testing.assert_allclose(first[:, 2:] * 2, second[:, 2:])

    def test_area_mode_keeps_scale(self):
        boxes = build_grid(default_level_specs(640)[3], Shot.SECOND, ratio_mode="area").boxes
        w, h = boxes[0, 2:]
        assert np.sqrt(w * h) == pytest.approx(128.0)
        assert h / w == pytest.approx(1.5)

    def test_boxes_are_read_only(self):
        grid = build_grid(default_level_specs(128)[0], Shot.FIRST)
        with pytest.raises(ValueError):
            grid.boxes[0, 0] = 1.0


class TestCounts:

    def test_totals(self):
        assert total_anchor_count(default_level_specs(640)) == 34125
        assert total_anchor_count(default_level_specs(640), both_shots=True) == 68250
        assert total_anchor_count(default_level_specs(128)) == 1365

    def test_shot_anchors_concatenate_levels(self):
        anchors = shot_anchors(128, Shot.SECOND, ratio_mode="width")
        assert anchors.shape == (1365, 4)
        level2 = build_grid(default_level_specs(128)[1], Shot.SECOND, ratio_mode="width").boxes
        np.testing.assert_array_equal(anchors[1024:1024 + 256], level2)

    def test_dump_rows(self):
        out = io.StringIO()
        rows = dump_csv(default_level_specs(128), out, (Shot.SECOND,))
        lines = out.getvalue().splitlines()
        assert rows == 1365
        assert len(lines) == 1366
        assert lines[0] == "level,shot,cell_i,cell_j,x,y,w,h"
