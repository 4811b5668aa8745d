# expect diagnostic
def broken(x):
    return max(x, key=lambda v: (v[0], v[1]
