#!/usr/bin/env python3
"""Generate data/ftp75_like.csv, a 1874 s urban cycle shaped like FTP-75.

Three phases (cold transient 505 s, stabilized 864 s, hot transient = repeat
of the first phase), peak about 25.7 m/s, mean about 7.5 m/s. Accelerations
are smooth (raised-cosine ramps) and stay below 1.5 m/s^2.

Usage: python3 tools/make_ftp75_like.py [output]
"""
import math
import sys

import numpy as np

# (peak m/s, cruise s, dwell-after s) per micro-trip.
PHASE_TRANSIENT = [
    (8.5, 6, 18), (14.0, 18, 10), (25.3, 70, 12), (13.0, 20, 18), (10.0, 8, 14),
    (12.0, 12, 14), (9.0, 6, 8),
]
PHASE_STABLE = [
    (7.0, 6, 20), (11.0, 14, 18), (13.5, 30, 16), (9.5, 8, 20), (12.5, 22, 14),
    (6.5, 4, 22), (15.0, 30, 18), (10.5, 12, 16), (13.0, 24, 20), (8.0, 6, 16),
    (14.0, 34, 18), (11.5, 18, 20), (9.0, 8, 14),
]


def ramp(v0, v1, accel):
    n = max(2, int(math.ceil(1.5 * abs(v1 - v0) / accel)))
    k = np.arange(1, n + 1)
    return list(v0 + (v1 - v0) * 0.5 * (1 - np.cos(np.pi * k / n)))


def phase(trips, length, rng):
    out = [0.0] * 10
    for peak, cruise, dwell in trips:
        out += ramp(0.0, peak, 1.0)
        wobble = 0.4 * np.sin(np.linspace(0, rng.uniform(1.5, 3.5) * np.pi, cruise))
        out += list(peak + wobble)
        out += ramp(peak + wobble[-1], 0.0, 1.2)
        out += [0.0] * dwell
    if len(out) > length:
        raise SystemExit(f"phase too long: {len(out)} > {length}")
    out += [0.0] * (length - len(out))
    return out


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "data/ftp75_like.csv"
    rng = np.random.default_rng(75)
    p1 = phase(PHASE_TRANSIENT, 505, rng)
    p2 = phase(PHASE_STABLE, 864, rng)
    speed = np.clip(np.array(p1 + p2 + p1), 0.0, None)
    speed[0] = speed[-1] = 0.0
    assert len(speed) == 1874
    assert np.max(np.abs(np.diff(speed))) < 1.5
    with open(path, "w", newline="\n") as f:
        f.write("t,speed_mps\n")
        for t, v in enumerate(speed):
            f.write(f"{t},{v:.3f}\n")
    print(f"{path}: {len(speed)} s, peak {speed.max():.2f} m/s, mean {speed.mean():.2f} m/s, "
          f"distance {speed.sum() / 1000:.2f} km, max |dv| {np.max(np.abs(np.diff(speed))):.2f}")


if __name__ == "__main__":
    main()
