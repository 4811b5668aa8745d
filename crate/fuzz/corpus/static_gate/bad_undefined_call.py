# expect undefined: detect_qrs, load_record
import sys


def main():
    signal = load_record(sys.argv[1])
    peaks = detect_qrs(signal)
    print(len(peaks))


if __name__ == "__main__":
    main()
