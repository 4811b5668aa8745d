"""Writes ecg.csv: one minute of synthetic single-lead ECG at 100 Hz with
annotated R-peaks. Baseline wander, T waves, weak beats and a few motion
spikes make naive thresholding fail in predictable ways."""

import math
import random

FS = 100
SECONDS = 60


def main():
    rng = random.Random(7)
    n = FS * SECONDS
    signal = [0.0] * n
    beats = []
    t = 0.6
    while t < SECONDS - 0.6:
        index = int(round(t * FS))
        beats.append(index)
        amplitude = 0.45 if rng.random() < 0.12 else rng.uniform(0.9, 1.2)
        for k in range(-8, 9):
            if 0 <= index + k < n:
                signal[index + k] += amplitude * math.exp(-(k * k) / 8.0)
        for k in range(-15, 16):
            j = index + 25 + k
            if 0 <= j < n:
                signal[j] += 0.35 * math.exp(-(k * k) / 40.0)
        t += 0.78 + 0.08 * math.sin(t / 5.0) + rng.gauss(0, 0.03)
    for _ in range(6):
        index = rng.randrange(n)
        signal[index] += 0.9
    marks = set(beats)
    with open("ecg.csv", "w") as out:
        out.write("time,ecg,beat\n")
        for i in range(n):
            wander = 0.3 * math.sin(2 * math.pi * 0.2 * i / FS)
            value = signal[i] + wander + rng.gauss(0, 0.04)
            out.write(f"{i / FS:.2f},{value:.4f},{1 if i in marks else 0}\n")


if __name__ == "__main__":
    main()
