# expect null: preprocess, detect
def preprocess(signal):
    """Remove noise."""
    pass


def detect(signal):
    # TODO: implement the detector
    ...


def main():
    print(detect(preprocess([1, 2, 3])))


main()
