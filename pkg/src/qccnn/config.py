"""Flat ``key = value`` text files used for configs and run manifests."""

from .errors import ConfigurationError


def parse_flat(text, allowed=None):
    """Parse ``key = value`` lines; ``#`` starts a comment. Returns a dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if allowed is not None and key not in allowed:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_flat(items):
    lines = []
    for key, value in items.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = ""
        value = str(value)
        if "\n" in value or "#" in value:
            raise ConfigurationError(f"value for {key!r} cannot contain newlines or '#'")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
