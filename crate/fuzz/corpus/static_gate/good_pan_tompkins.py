import sys
from collections import deque

import numpy as np
from scipy.signal import butter, filtfilt


def bandpass(signal, fs, low=5.0, high=15.0):
    b, a = butter(2, [low / (fs / 2), high / (fs / 2)], btype="band")
    return filtfilt(b, a, signal)


def integrate(x, width):
    window = deque(maxlen=width)
    out = []
    for value in x:
        window.append(value * value)
        out.append(sum(window) / len(window))
    return np.asarray(out)


class Detector:
    """Keeps running peak estimates between calls."""

    def __init__(self, fs):
        self.fs = fs
        self.signal_level = 0.0

    def __call__(self, x):
        filtered = bandpass(x, self.fs)
        energy = integrate(np.diff(filtered), int(0.15 * self.fs))
        threshold = (lambda e: 0.3 * e.max())(energy)
        return [i for i, (a, b) in enumerate(zip(energy, energy[1:])) if a > threshold and a >= b]


def main():
    data = np.loadtxt(sys.argv[1], delimiter=",", skiprows=1, usecols=1)
    peaks = Detector(360)(data)
    print(f"FINAL_METRIC: count={len(peaks)}")


if __name__ == "__main__":
    main()
