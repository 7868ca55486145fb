"""``key = value`` text configs (``#`` starts a comment)."""

from .errors import BadConfig


def parse_kv(text):
    out = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise BadConfig(f"line {line_no}: empty key")
        if key in out:
            raise BadConfig(f"line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_bool(value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise BadConfig(f"not a boolean: {value!r}")


def parse_floats(value, n=None):
    try:
        vals = [float(s) for s in value.replace(",", " ").split()]
    except ValueError:
        raise BadConfig(f"not a list of numbers: {value!r}") from None
    if n is not None and len(vals) != n:
        raise BadConfig(f"expected {n} numbers, got {len(vals)} in {value!r}")
    return vals
