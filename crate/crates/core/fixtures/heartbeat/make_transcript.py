"""Generates transcript.jsonl for the heartbeat session: one baseline
synthesis with a crashing first version, then five optimisation rounds.
Every program in here runs against ecg.csv with the standard library only.

Run from this directory: python3 make_transcript.py"""

import json

FUNCS = {}

FUNCS["load_ecg"] = '''def load_ecg(path):
    """Read ECG samples and annotated beat indices from the CSV file."""
    signal = []
    beats = []
    with open(path, newline="") as handle:
        for index, row in enumerate(csv.DictReader(handle)):
            signal.append(float(row["ecg"]))
            if row["beat"] == "1":
                beats.append(index)
    return signal, beats'''

FUNCS["load_ecg_buggy"] = FUNCS["load_ecg"].replace('row["ecg"]', 'row["ECG"]')

FUNCS["detect_peaks"] = '''def detect_peaks(signal, threshold):
    """Indices of local maxima above the threshold."""
    peaks = []
    for i in range(1, len(signal) - 1):
        if signal[i] > threshold and signal[i] >= signal[i - 1] and signal[i] > signal[i + 1]:
            peaks.append(i)
    return peaks'''

FUNCS["evaluate"] = '''def evaluate(detected, beats, tolerance):
    """Beat accuracy TP / (TP + FP + FN), matching within `tolerance` samples."""
    unmatched = sorted(beats)
    hits = 0
    for peak in detected:
        found = None
        for beat in unmatched:
            if abs(beat - peak) <= tolerance:
                found = beat
                break
        if found is not None:
            unmatched.remove(found)
            hits += 1
    total = len(detected) + len(unmatched)
    return hits / total if total else 0.0'''

FUNCS["moving_average"] = '''def moving_average(signal, window):
    """Centred moving average; the window shrinks at the edges."""
    prefix = [0.0]
    for value in signal:
        prefix.append(prefix[-1] + value)
    half = window // 2
    out = []
    for i in range(len(signal)):
        lo = max(0, i - half)
        hi = min(len(signal), i + half + 1)
        out.append((prefix[hi] - prefix[lo]) / (hi - lo))
    return out'''

FUNCS["remove_baseline"] = '''def remove_baseline(signal, window):
    """Subtract the slow baseline estimated by a wide moving average."""
    baseline = moving_average(signal, window)
    return [s - b for s, b in zip(signal, baseline)]'''

FUNCS["slope_energy"] = '''def slope_energy(signal):
    """Squared central difference, which favours the steep QRS flanks."""
    energy = [0.0] * len(signal)
    for i in range(1, len(signal) - 1):
        slope = signal[i + 1] - signal[i - 1]
        energy[i] = slope * slope
    return energy'''

FUNCS["detect_refractory"] = '''def detect_refractory(signal, threshold, refractory):
    """Local maxima above the threshold, keeping the larger of two peaks
    closer than `refractory` samples."""
    peaks = []
    for i in range(1, len(signal) - 1):
        if signal[i] <= threshold or signal[i] < signal[i - 1] or signal[i] <= signal[i + 1]:
            continue
        if peaks and i - peaks[-1] < refractory:
            if signal[i] > signal[peaks[-1]]:
                peaks[-1] = i
            continue
        peaks.append(i)
    return peaks'''

FUNCS["adaptive_threshold"] = '''def adaptive_threshold(signal, fraction, window):
    """Per-sample threshold: `fraction` of the local maximum over `window` samples."""
    half = window // 2
    out = []
    for i in range(len(signal)):
        lo = max(0, i - half)
        hi = min(len(signal), i + half + 1)
        out.append(fraction * max(signal[lo:hi]))
    return out'''

FUNCS["detect_adaptive"] = '''def detect_adaptive(signal, thresholds, refractory):
    """Refractory peak picking against a per-sample threshold."""
    peaks = []
    for i in range(1, len(signal) - 1):
        if signal[i] <= thresholds[i] or signal[i] < signal[i - 1] or signal[i] <= signal[i + 1]:
            continue
        if peaks and i - peaks[-1] < refractory:
            if signal[i] > signal[peaks[-1]]:
                peaks[-1] = i
            continue
        peaks.append(i)
    return peaks'''

FUNCS["reject_spikes"] = '''def reject_spikes(signal, peaks, width):
    """Drop peaks whose neighbourhood `width` samples away has already fallen
    below a fifth of the peak; real QRS complexes are wider than motion spikes."""
    kept = []
    for p in peaks:
        lo = max(0, p - width)
        hi = min(len(signal) - 1, p + width)
        if min(signal[lo], signal[hi]) > 0.2 * signal[p]:
            kept.append(p)
    return kept'''

FUNCS["refine_peaks"] = '''def refine_peaks(signal, peaks, radius):
    """Move each detection to the largest sample within `radius`."""
    refined = []
    for p in peaks:
        lo = max(0, p - radius)
        hi = min(len(signal), p + radius + 1)
        best = lo
        for i in range(lo, hi):
            if signal[i] > signal[best]:
                best = i
        refined.append(best)
    return refined'''

FUNCS["median_rr_filter"] = '''def median_rr_filter(peaks):
    """Drop a detection that arrives sooner than half the median RR interval."""
    gaps = sorted(b - a for a, b in zip(peaks, peaks[1:]))
    median = gaps[len(gaps) // 2]
    kept = [peaks[0]]
    for p in peaks[1:]:
        if p - kept[-1] >= median // 2:
            kept.append(p)
    return kept'''

# Round 4 first ships a median that divides by an empty slice.
FUNCS["median_rr_filter_buggy"] = '''def median_rr_filter(peaks):
    """Drop a detection that arrives sooner than half the median RR interval."""
    gaps = sorted(b - a for a, b in zip(peaks, peaks[1:]))
    median = sum(gaps[len(gaps) // 2 - 1:len(gaps) // 2 + 1]) // len(gaps[:0])
    kept = [peaks[0]]
    for p in peaks[1:]:
        if p - kept[-1] >= median // 2:
            kept.append(p)
    return kept'''

IMPORTS = {"load_ecg": "import csv\n\n\n", "load_ecg_buggy": "import csv\n\n\n"}


def program(funcs, body):
    parts = ["import csv\nimport sys\n"]
    for name in funcs:
        parts.append(FUNCS[name])
    main = "def main():\n    signal, beats = load_ecg(sys.argv[1])\n"
    main += "".join("    " + line + "\n" for line in body)
    main += '    print(f"detected {len(detected)} beats, annotated {len(beats)}")\n'
    main += '    print(f"FINAL_METRIC: accuracy={evaluate(detected, beats, 5):.4f}")\n'
    parts.append(main.rstrip("\n"))
    parts.append('if __name__ == "__main__":\n    main()')
    return "\n\n\n".join(parts) + "\n"


def fenced(code, lang="python"):
    return f"```{lang}\n{code}```"


def integration_reply(code, title, usage):
    docs = (
        f"# {title}\n\n{usage}\n\n## Usage\n\n```\npython3 detector.py ecg.csv\n```\n\n"
        "The last line of output is `FINAL_METRIC: accuracy=<value>`."
    )
    return fenced(code) + "\n\n````markdown\n" + docs + "\n````"


def design_reply(subtasks):
    blocks = []
    for label, title, fname, actions, io in subtasks:
        lines = [f"### Step {label}: {title}", f"Function: {fname}", "Actions:"]
        lines += [f"- {a}" for a in actions]
        lines.append(f"IO: {io}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def module_reply(name, source_name=None):
    key = source_name or name
    return fenced(IMPORTS.get(key, "") + FUNCS[key] + "\n")


records = []


def chat(matcher, reply):
    records.append({"match": matcher, "reply": reply})


def search(query, results):
    records.append({"channel": "search", "match": query, "results": results})


def page(title, text):
    return f"<html><head><title>{title}</title></head><body><nav>Home | About</nav><h1>{title}</h1><p>{text}</p></body></html>"


# Retrieval.
chat(
    "Identify the key terminologies",
    "TERMINOLOGIES: R-peak, Pan-Tompkins algorithm\n"
    "- R-peak: the detector has to locate the tallest deflection of each QRS complex\n"
    "- Pan-Tompkins algorithm: the standard real-time QRS detection pipeline",
)
search("R-peak", [
    {
        "url": "https://ecg.example.org/r-peak",
        "title": "R wave",
        "snippet": "The R wave is the first upward deflection of the QRS complex.",
        "page": page("R wave basics", "The R wave is the first upward deflection of the QRS complex. "
                     "R-peak detection locates the maximum of each QRS complex; the interval between "
                     "consecutive R-peaks is the RR interval, usually 0.6 to 1.2 seconds at rest."),
    },
    {
        "url": "https://shop.example.com/r-peak-watch",
        "title": "R-Peak smartwatch sale",
        "snippet": "Buy the R-Peak fitness watch today.",
        "page": page("R-Peak watch", "Limited offer on the R-Peak watch with free shipping."),
    },
])
chat("retrieved while searching for the terminology", "RELEVANT: 1")
search("Pan-Tompkins", [
    {
        "url": "https://ecg.example.org/pan-tompkins",
        "title": "Pan-Tompkins QRS detection",
        "snippet": "Band-pass filter, derivative, squaring, moving-window integration, adaptive thresholds.",
        "page": page("Pan-Tompkins QRS detection", "The Pan-Tompkins algorithm band-pass filters the ECG, "
                     "differentiates it, squares the result and integrates it over a moving window of about "
                     "150 ms. Peaks are accepted against adaptive thresholds and a 200 ms refractory period "
                     "suppresses double detections."),
    },
])
chat("retrieved while searching for the terminology", "RELEVANT: 1")

# Baseline synthesis.
chat(
    "preliminary algorithm outline",
    "1. Load data: read the ECG samples and the annotated beat positions from the CSV file.\n"
    "2. Detect peaks: mark local maxima of the raw signal above a fixed amplitude threshold.\n"
    "3. Evaluate: match detections to annotations within 50 ms and report the accuracy.",
)
BASE_DESIGN = [
    ("1", "Load data", "load_ecg", ["open the CSV with csv.DictReader", "collect the ecg column as floats",
                                     "collect row indices where beat is 1"],
     "path -> (signal: list[float], beats: list[int])"),
    ("2", "Detect peaks", "detect_peaks", ["scan interior samples", "keep local maxima above the threshold"],
     "(signal, threshold) -> list[int]"),
    ("3", "Evaluate", "evaluate", ["greedily match each detection to the nearest unmatched beat within tolerance",
                                    "return TP / (TP + FP + FN)"],
     "(detected, beats, tolerance) -> float"),
]
chat("Elaborate on each step", design_reply(BASE_DESIGN))
chat("Write the Python function `load_ecg`", module_reply("load_ecg"))
chat("Write the Python function `detect_peaks`", module_reply("detect_peaks"))
chat("Write the Python function `evaluate`", module_reply("evaluate"))
BASE_BODY = ["detected = detect_peaks(signal, 0.6)"]
chat(
    "Integrate the code segments",
    integration_reply(program(["load_ecg_buggy", "detect_peaks", "evaluate"], BASE_BODY), "Heartbeat detector",
                      "Detects R-peaks with a fixed amplitude threshold."),
)
chat("failed when executed", fenced(program(["load_ecg", "detect_peaks", "evaluate"], BASE_BODY)))


def iteration(outline, design, body, funcs, title, blurb, debug_from=None, tool=None):
    if tool is not None:
        records.append({"match": "Improve the performance", "tool_call": {"name": "web_search", "arguments": tool[0]}})
        search(tool[0], tool[1])
    chat("Improve the performance", "\n".join(f"{i + 1}. {s}" for i, s in enumerate(outline)))
    chat("Elaborate on each step", design_reply(design))
    for _, _, fname, _, _ in design:
        chat(f"Write the Python function `{fname}`", module_reply(fname))
    first = funcs if debug_from is None else debug_from
    chat("Integrate the code segments", integration_reply(program(first, body), title, blurb))
    if debug_from is not None:
        chat("failed when executed", fenced(program(funcs, body)))


LOAD = BASE_DESIGN[0]


def evaluate_step(n):
    return (str(n),) + BASE_DESIGN[2][1:]

iteration(
    [
        "Load data: read samples and annotations.",
        "Remove baseline: subtract a 1 s moving average so wander does not cross the threshold.",
        "Detect peaks: local maxima of the corrected signal above 0.5.",
        "Evaluate: accuracy against the annotations.",
    ],
    [
        LOAD,
        ("2", "Remove baseline", "remove_baseline", ["estimate the baseline with moving_average", "subtract it"],
         "(signal, window) -> list[float]"),
        ("2.1", "Moving average", "moving_average", ["prefix sums", "centred window shrinking at the edges"],
         "(signal, window) -> list[float]"),
        ("3", "Detect peaks", "detect_peaks", ["local maxima above threshold"], "(signal, threshold) -> list[int]"),
        evaluate_step(4),
    ],
    ["clean = remove_baseline(signal, 101)", "detected = detect_peaks(clean, 0.5)"],
    ["load_ecg", "moving_average", "remove_baseline", "detect_peaks", "evaluate"],
    "Heartbeat detector", "Removes baseline wander before thresholding.",
)

iteration(
    [
        "Load data: read samples and annotations.",
        "Remove baseline: 1 s moving average subtraction.",
        "Slope energy: square the central difference to emphasise the QRS.",
        "Detect with refractory period: threshold the energy and ignore peaks within 250 ms of a stronger one.",
        "Evaluate: accuracy against the annotations.",
    ],
    [
        LOAD,
        ("2", "Remove baseline", "remove_baseline", ["subtract moving_average"], "(signal, window) -> list[float]"),
        ("2.1", "Moving average", "moving_average", ["prefix sums"], "(signal, window) -> list[float]"),
        ("3", "Slope energy", "slope_energy", ["central difference", "square"], "signal -> list[float]"),
        ("4", "Detect with refractory period", "detect_refractory",
         ["local maxima above threshold", "merge peaks closer than the refractory period"],
         "(signal, threshold, refractory) -> list[int]"),
        evaluate_step(5),
    ],
    ["clean = remove_baseline(signal, 101)", "energy = slope_energy(clean)",
     "detected = detect_refractory(energy, 0.02, 25)"],
    ["load_ecg", "moving_average", "remove_baseline", "slope_energy", "detect_refractory", "evaluate"],
    "Heartbeat detector", "Thresholds the slope energy with a refractory period.",
    tool=("Pan-Tompkins refractory period", [
        {
            "url": "https://ecg.example.org/refractory",
            "title": "QRS refractory period",
            "snippet": "After a QRS complex the heart cannot depolarise again for about 200 ms.",
            "page": page("QRS refractory period", "After a QRS complex no new beat can occur for about 200 ms."),
        },
    ]),
)

iteration(
    [
        "Load data: read samples and annotations.",
        "Remove baseline: 1 s moving average subtraction.",
        "Adaptive threshold: half of the local maximum over 2 s.",
        "Detect peaks: refractory peak picking against the adaptive threshold.",
        "Evaluate: accuracy against the annotations.",
    ],
    [
        LOAD,
        ("2", "Remove baseline", "remove_baseline", ["subtract moving_average"], "(signal, window) -> list[float]"),
        ("2.1", "Moving average", "moving_average", ["prefix sums"], "(signal, window) -> list[float]"),
        ("3", "Adaptive threshold", "adaptive_threshold", ["local maximum over the window", "scale by fraction"],
         "(signal, fraction, window) -> list[float]"),
        ("4", "Detect peaks", "detect_adaptive", ["compare against per-sample threshold", "refractory merge"],
         "(signal, thresholds, refractory) -> list[int]"),
        evaluate_step(5),
    ],
    ["clean = remove_baseline(signal, 101)", "thresholds = adaptive_threshold(clean, 0.35, 201)",
     "detected = detect_adaptive(clean, thresholds, 25)"],
    ["load_ecg", "moving_average", "remove_baseline", "adaptive_threshold", "detect_adaptive", "evaluate"],
    "Heartbeat detector", "Adaptive thresholding on the baseline-corrected signal.",
)

R4_FUNCS = ["load_ecg", "moving_average", "remove_baseline", "adaptive_threshold", "detect_adaptive",
            "reject_spikes", "median_rr_filter", "evaluate"]
iteration(
    [
        "Load data: read samples and annotations.",
        "Remove baseline: 1 s moving average subtraction.",
        "Detect peaks: adaptive threshold with a refractory period.",
        "Reject spikes: drop detections narrower than a QRS complex.",
        "RR filter: drop detections that come too soon after the previous beat.",
        "Evaluate: accuracy against the annotations.",
    ],
    [
        LOAD,
        ("2", "Remove baseline", "remove_baseline", ["subtract moving_average"], "(signal, window) -> list[float]"),
        ("2.1", "Moving average", "moving_average", ["prefix sums"], "(signal, window) -> list[float]"),
        ("3", "Adaptive threshold", "adaptive_threshold", ["scaled local maximum"],
         "(signal, fraction, window) -> list[float]"),
        ("3.1", "Detect peaks", "detect_adaptive", ["refractory peak picking"],
         "(signal, thresholds, refractory) -> list[int]"),
        ("4", "Reject spikes", "reject_spikes", ["compare the peak with samples `width` away"],
         "(signal, peaks, width) -> list[int]"),
        ("5", "RR filter", "median_rr_filter", ["median RR interval", "drop early detections"],
         "peaks -> list[int]"),
        evaluate_step(6),
    ],
    ["clean = remove_baseline(signal, 101)", "thresholds = adaptive_threshold(clean, 0.35, 201)",
     "peaks = detect_adaptive(clean, thresholds, 25)", "peaks = reject_spikes(clean, peaks, 2)",
     "detected = median_rr_filter(peaks)"],
    R4_FUNCS,
    "Heartbeat detector", "Adaptive thresholding with spike rejection and an RR sanity filter.",
    debug_from=[f if f != "median_rr_filter" else "median_rr_filter_buggy" for f in R4_FUNCS],
)

iteration(
    [
        "Load data: read samples and annotations.",
        "Remove baseline: 1 s moving average subtraction.",
        "Detect peaks: adaptive threshold with a refractory period.",
        "Reject spikes: drop detections narrower than a QRS complex.",
        "Refine: move each detection to the local maximum of the raw signal within 30 ms.",
        "Evaluate: accuracy against the annotations.",
    ],
    [
        LOAD,
        ("2", "Remove baseline", "remove_baseline", ["subtract moving_average"], "(signal, window) -> list[float]"),
        ("2.1", "Moving average", "moving_average", ["prefix sums"], "(signal, window) -> list[float]"),
        ("3", "Adaptive threshold", "adaptive_threshold", ["scaled local maximum"],
         "(signal, fraction, window) -> list[float]"),
        ("3.1", "Detect peaks", "detect_adaptive", ["refractory peak picking"],
         "(signal, thresholds, refractory) -> list[int]"),
        ("4", "Reject spikes", "reject_spikes", ["compare the peak with samples `width` away"],
         "(signal, peaks, width) -> list[int]"),
        ("5", "Refine", "refine_peaks", ["search the raw signal within the radius"],
         "(signal, peaks, radius) -> list[int]"),
        evaluate_step(6),
    ],
    ["clean = remove_baseline(signal, 101)", "thresholds = adaptive_threshold(clean, 0.35, 201)",
     "peaks = detect_adaptive(clean, thresholds, 25)", "peaks = reject_spikes(clean, peaks, 2)",
     "detected = refine_peaks(signal, peaks, 3)"],
    ["load_ecg", "moving_average", "remove_baseline", "adaptive_threshold", "detect_adaptive", "reject_spikes",
     "refine_peaks", "evaluate"],
    "Heartbeat detector", "Adaptive thresholding with spike rejection and peak refinement.",
)

def main():
    with open("transcript.jsonl", "w") as out:
        out.write("# Scripted heartbeat session. Regenerate with: python3 make_transcript.py\n")
        for record in records:
            out.write(json.dumps(record) + "\n")


if __name__ == "__main__":
    main()
