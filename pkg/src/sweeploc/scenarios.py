"""Built-in scenario presets, also usable as YAML starting points."""

from __future__ import annotations

import math

from .scenario import (ApConfig, ChannelConfig, DetectorConfig, Position,
                       Scenario)


def bench_scenario(seed: int = 0) -> Scenario:
    """Two APs facing each other across open ground; clean channel."""
    ap1 = ApConfig(position=Position(0.0, 0.0), boresight_rad=0.0,
                   preamble_id=1)
    ap2 = ApConfig(position=Position(100.0, 0.0), boresight_rad=math.pi,
                   preamble_id=2)
    return Scenario(aps=(ap1, ap2), seed=seed)


def farm_scenario(seed: int = 0) -> Scenario:
    """A 120 x 90 m field with APs at the midpoints of two perpendicular
    edges, boresights into the field. Transmit power is set high enough
    that the preamble stays above the detector floor in the far corners."""
    ap1 = ApConfig(position=Position(60.0, 0.0), boresight_rad=math.pi / 2,
                   tx_power_dbm=40.0, preamble_id=1)
    ap2 = ApConfig(position=Position(0.0, 45.0), boresight_rad=0.0,
                   tx_power_dbm=40.0, preamble_id=2)
    return Scenario(aps=(ap1, ap2),
                    channel=ChannelConfig(nlos_path_count=3),
                    detector=DetectorConfig(),
                    field_extent_m=(120.0, 90.0),
                    seed=seed)


def range_scenario(seed: int = 0) -> Scenario:
    """A single AP for walk-away range tests, with mild multipath."""
    ap = ApConfig(position=Position(0.0, 0.0), boresight_rad=0.0,
                  tx_power_dbm=28.0, preamble_id=1)
    return Scenario(aps=(ap,),
                    channel=ChannelConfig(nlos_path_count=3,
                                          multipath_ratio=0.2),
                    seed=seed)


BUILTIN_SCENARIOS = {
    "bench": bench_scenario,
    "farm": farm_scenario,
    "range": range_scenario,
}
