import re


def tokens(text):
    if (m := re.search(r"\d+", text)) is not None:
        return [m.group(0)]

    def fallback(s):
        return s.split()

    return fallback(text)


async def fetch(session, url):
    async with session.get(url) as response:
        return await response.text()


try:
    import ujson as json
except ImportError:
    import json


def dump(obj):
    global _cache
    _cache = json.dumps(obj)
    return _cache


@staticmethod
def decorated(*args, **kwargs):
    total, *rest = args
    return total, rest, kwargs


text = """def not_a_function():
    pass
"""
print(tokens("a 12 b"), dump({"k": [1, 2]}), decorated(1, 2, x=3), text)
