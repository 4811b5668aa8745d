# expect null: evaluate
# expect undefined: bandpass_filter
def evaluate(peaks, labels):
    pass


def main(x):
    return evaluate(bandpass_filter(x), [])
