"""Regenerate the built-in latency tables under src/powmesh/data/.

Link latency is estimated the way public ping tables report it, as a round
trip: a 5 ms access/processing floor plus 1 ms per 50 km of great-circle
distance (fibre at ~2/3 c, there and back, with a 2x routing detour). The
output tracks measured city-to-city pings closely enough for ordering
studies; replace the CSVs with measured data when it is available.
"""

import csv
import math
from pathlib import Path

CITIES = {
    "netherlands": {
        "Alblasserdam": (51.866, 4.660),
        "Amsterdam": (52.370, 4.895),
        "Dronten": (52.525, 5.718),
        "Eindhoven": (51.441, 5.478),
        "Rotterdam": (51.924, 4.478),
        "The Hague": (52.070, 4.300),
    },
    "europe": {
        "Brussels": (50.850, 4.352),
        "Athens": (37.984, 23.728),
        "Barcelona": (41.385, 2.173),
        "Izmir": (38.419, 27.129),
        "Lisbon": (38.722, -9.139),
        "Milan": (45.464, 9.190),
    },
    "world": {
        "Dhaka": (23.810, 90.412),
        "Hangzhou": (30.274, 120.155),
        "Istanbul": (41.008, 28.978),
        "Lagos": (6.524, 3.379),
        "Melbourne": (-37.814, 144.963),
        "San Diego": (32.716, -117.161),
    },
}

EARTH_RADIUS_KM = 6371.0


def haversine_km(a, b):
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def ping_ms(a, b):
    if a == b:
        return 0.0
    return round(5.0 + haversine_km(a, b) / 50.0, 1)


def write_table(path, coords):
    names = list(coords)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city"] + names)
        for n in names:
            w.writerow([n] + [f"{ping_ms(coords[n], coords[m]):.1f}" for m in names])


def main():
    out = Path(__file__).resolve().parents[1] / "src" / "powmesh" / "data"
    out.mkdir(parents=True, exist_ok=True)
    merged = {}
    for setup, coords in CITIES.items():
        write_table(out / f"{setup}.csv", coords)
        merged.update(coords)
    write_table(out / "global.csv", merged)


if __name__ == "__main__":
    main()
