# expect diagnostic
# expect null: doc
def doc():
    """This docstring never ends.
    return 1
