"""Regenerate the packaged 8-bus feeder and its synthetic day.

The shipped scenario is a stressed residential day: a morning demand bump,
strong midday PV export (reverse flow and voltage rise), and an evening
peak (voltage drop).  Two households per downstream bus; per-bus scaling is
drawn once from a fixed seed so the files are reproducible bit for bit.

Run from the repository root:

    python3 demos/make_synthetic_day.py

It rewrites src/droopopt/data/{feeder_8bus.json, scenario_8bus_day.csv,
batteries_8bus.json, config_default.json}.
"""

import csv
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "droopopt" / "data"

N_BUS = 7  # downstream buses
RESOLUTION_H = 5.0 / 60.0
SAMPLES = 288  # one day
SEED = 20240811

# Feeder: mostly a chain with one lateral at bus 3, typical low-voltage
# cable impedances on a 10 kVA / 230 V base.
SEGMENTS = [
    {"from": 0, "to": 1, "r_pu": 0.0065, "x_pu": 0.0040},
    {"from": 1, "to": 2, "r_pu": 0.0070, "x_pu": 0.0042},
    {"from": 2, "to": 3, "r_pu": 0.0075, "x_pu": 0.0044},
    {"from": 3, "to": 4, "r_pu": 0.0080, "x_pu": 0.0046},
    {"from": 4, "to": 5, "r_pu": 0.0085, "x_pu": 0.0048},
    {"from": 5, "to": 6, "r_pu": 0.0090, "x_pu": 0.0050},
    {"from": 3, "to": 7, "r_pu": 0.0080, "x_pu": 0.0046},
]


def household_load_kw(hour: np.ndarray) -> np.ndarray:
    """One household's demand: overnight base, morning bump, evening peak."""
    base = 0.30
    morning = 0.9 * np.exp(-0.5 * ((hour - 7.5) / 1.3) ** 2)
    evening = 2.3 * np.exp(-0.5 * ((hour - 19.0) / 1.9) ** 2)
    midday = 0.30 * np.exp(-0.5 * ((hour - 13.0) / 3.0) ** 2)
    return base + morning + midday + evening


def pv_generation_kw(hour: np.ndarray) -> np.ndarray:
    """One rooftop system's output, clear-sky bell between 6h and 19h."""
    bell = 2.6 * np.exp(-0.5 * ((hour - 12.5) / 2.6) ** 2)
    return np.where((hour > 6.0) & (hour < 19.0), bell, 0.0)


def main():
    rng = np.random.default_rng(SEED)
    hours = np.arange(SAMPLES) * RESOLUTION_H

    load_scale = rng.uniform(0.85, 1.15, size=N_BUS)
    pv_scale = rng.uniform(0.80, 1.20, size=N_BUS)

    load = household_load_kw(hours)
    pv = pv_generation_kw(hours)
    p_kw = np.empty((SAMPLES, N_BUS))
    for m in range(N_BUS):
        # two households per bus, both with PV
        p_kw[:, m] = 2.0 * (load * load_scale[m] - pv * pv_scale[m])

    OUT.mkdir(parents=True, exist_ok=True)

    feeder = {
        "power_base_va": 10_000.0,
        "voltage_base_v": 230.0,
        "slack_voltage_pu": 1.0,
        "buses": list(range(N_BUS + 1)),
        "segments": SEGMENTS,
    }
    with open(OUT / "feeder_8bus.json", "w") as fh:
        json.dump(feeder, fh, indent=2)
        fh.write("\n")

    with open(OUT / "scenario_8bus_day.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time"] + [f"p_{m + 1}" for m in range(N_BUS)])
        for i, h in enumerate(hours):
            hh, mm = int(h), int(round((h - int(h)) * 60))
            writer.writerow(
                [f"{hh:02d}:{mm:02d}"] + [f"{p_kw[i, m]:.4f}" for m in range(N_BUS)]
            )

    batteries = [
        {
            "bus": m + 1,
            "s_rated_kva": 5.0,
            "c_max_kwh": 10.0,
            "c_min_kwh": 0.0,
            "c_init_kwh": 3.0,
        }
        for m in range(N_BUS)
    ]
    with open(OUT / "batteries_8bus.json", "w") as fh:
        json.dump(batteries, fh, indent=2)
        fh.write("\n")

    config = {
        "epsilon": 0.1,
        "designer": "opfpc",
        "horizon_scheme_minutes": [[6, 5], [7, 30], [10, 120]],
        "reopt_minutes": 15,
        "gain_update_minutes": 5,
        "forecaster": "perfect",
        "final_charge_enforced": False,
        "seed": 0,
    }
    with open(OUT / "config_default.json", "w") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")

    print(f"wrote feeder, scenario ({SAMPLES} x {N_BUS}), batteries, config -> {OUT}")
    print(f"net load range: {p_kw.min():.2f} .. {p_kw.max():.2f} kW per bus")


if __name__ == "__main__":
    main()
