import numpy as np
import pytest

from bevpredict.ai.network import build_network
from bevpredict.models import GridSpec, HeadType, NetSpec, SynthConfig, VehicleState
from bevpredict.services.scenes import synth_highway


@pytest.fixture
def unit_grid():
    """32 x 8 pixels at 1 m/px on both axes"""
    return GridSpec(width=32, height=8, x_m_per_px=1.0, y_m_per_px=1.0)


@pytest.fixture
def table_vehicle():
    return VehicleState(id=1, cx=6.63, cy=3.21, w=5.0, h=2.0)


@pytest.fixture
def toy_spec():
    return NetSpec(depth=2, base_features=2, in_channels=2, out_channels=2)


@pytest.fixture
def toy_net64(toy_spec):
    return build_network(toy_spec, seed=3, dtype=np.float64)


@pytest.fixture
def make_net():
    def _make(head=HeadType.LINEAR, depth=2, base_features=2, channels=2, seed=3, dtype=np.float64):
        spec = NetSpec(depth=depth, base_features=base_features, in_channels=channels,
                       out_channels=channels, head=head)
        return build_network(spec, seed=seed, dtype=dtype)
    return _make


@pytest.fixture
def cv_scene():
    """Constant-velocity two-lane highway, 128 m x 8 m, no spawning or lane changes"""
    cfg = SynthConfig(
        n_vehicles=4, n_lanes=1, lane_width=3.5, duration_s=6.0,
        extent_x=128.0, extent_y=8.0, seed=11,
    )
    return synth_highway(cfg)
