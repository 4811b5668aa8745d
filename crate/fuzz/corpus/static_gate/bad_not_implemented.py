# expect null: score
def score(pred, truth):
    raise NotImplementedError("fill in later")


print(score([1], [1]))
