"""How weather degrades each sensor.

Spawns the same scene under every weather condition and prints what the
camera, lidar and radar report: noise variance, usable range, and a few
raw range measurements against the true gap.
"""

from dataclasses import replace

import numpy as np

from edgedrive.sensors import (
    default_sensor_suite,
    degrade_range,
    nearest_obstacle_ahead,
    noise_variance_for,
    sense,
)
from edgedrive.simulation import (
    EpisodeConfig,
    WeatherCondition,
    WeatherKind,
    spawn_scenario,
)


def main():
    suite = default_sensor_suite()
    weathers = [
        WeatherCondition(WeatherKind.CLEAR),
        WeatherCondition(WeatherKind.FOG, 1.0),
        WeatherCondition(WeatherKind.RAIN, 1.0),
        WeatherCondition(WeatherKind.SNOW, 1.0),
    ]

    print("noise variance and usable range per sensor and weather")
    header = f"{'weather':<8}" + "".join(
        f"{sp.kind.value + ' var':>12}{sp.kind.value + ' rng':>12}"
        for sp in suite
    )
    print(header)
    for weather in weathers:
        row = f"{weather.kind.value:<8}"
        for sp in suite:
            var = noise_variance_for(sp, weather)
            usable = degrade_range(sp, weather)
            row += f"{var:>12.3f}{usable:>12.1f}"
        print(row)

    print()
    print("ten raw camera range readings of one obstacle, per weather")
    scenario = EpisodeConfig(spawn_x_min=40.0, spawn_x_max=45.0, n_obstacles=1)
    camera = suite[0]
    for weather in weathers:
        world = spawn_scenario(replace(scenario, weather=weather), seed=3)
        _, true_range = nearest_obstacle_ahead(world)
        readings = [sense(camera, world).values[0] for _ in range(10)]
        print(
            f"{weather.kind.value:<8} true range {true_range:6.2f} m   "
            f"spread {np.std(readings):6.3f}   "
            f"readings {np.round(readings, 2)}"
        )


if __name__ == "__main__":
    main()
