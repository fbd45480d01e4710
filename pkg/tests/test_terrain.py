import numpy as np
import pytest

from teleop.config import TerrainConfig
from teleop.terrain import TerrainError, make_terrain


class TestMakeTerrain:
    """Test heightfield generation"""

    def test_flat_is_zero(self):
        """Test flat terrain heights"""
        terrain = make_terrain("flat", 5)
        assert terrain.is_flat
        assert np.all(terrain.heights == 0.0)
        np.testing.assert_array_equal(terrain.height(np.array([[1.0, 2.0], [-3.0, 0.5]])), 0.0)

    def test_rough_is_deterministic(self):
        """Test the same seed gives the same heightfield"""
        np.testing.assert_array_equal(make_terrain("rough", 3).heights, make_terrain("rough", 3).heights)
        assert not np.array_equal(make_terrain("rough", 3).heights, make_terrain("rough", 4).heights)

    def test_rough_amplitude(self):
        """Test rough heights stay within 2.5 cm"""
        assert np.max(np.abs(make_terrain("rough", 3).heights)) <= 0.025

    def test_obstacles(self):
        """Test obstacles are at most 5 cm tall and leave the origin clear"""
        terrain = make_terrain("low_obstacles", 1)
        assert terrain.heights.max() <= 0.05
        assert terrain.heights.min() == 0.0
        assert terrain.heights.max() > 0.0
        assert terrain.height(np.zeros(2)) == 0.0

    def test_bilinear_between_samples(self):
        """Test heights between grid samples interpolate linearly"""
        terrain = make_terrain("rough", 0, TerrainConfig(size=1.0, cell_size=0.5))
        h = terrain.heights
        mid = terrain.height(np.array([-0.25, -0.5]))
        assert mid == pytest.approx(0.5 * (h[0, 0] + h[1, 0]))

    def test_outside_grid_is_zero(self):
        """Test queries beyond the heightfield return ground level"""
        terrain = make_terrain("rough", 0)
        assert terrain.height(np.array([100.0, 0.0])) == 0.0

    def test_with_friction(self):
        """Test friction override keeps the heights"""
        terrain = make_terrain("rough", 2, friction=1.0).with_friction(0.3)
        assert terrain.friction == 0.3
        np.testing.assert_array_equal(terrain.heights, make_terrain("rough", 2).heights)

    def test_unknown_kind(self):
        """Test an unknown terrain kind"""
        with pytest.raises(TerrainError, match="Unknown terrain kind"):
            make_terrain("lava", 0)
