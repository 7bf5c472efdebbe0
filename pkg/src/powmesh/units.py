"""Parsing and formatting of sizes, durations and seed ranges (decimal units)."""

from __future__ import annotations

import re

from .errors import ValidationError

_SIZE = {"": 1, "b": 1, "kb": 1_000, "k": 1_000, "mb": 1_000_000, "m": 1_000_000}
_TIME = {"": 1.0, "s": 1.0, "m": 60.0, "min": 60.0, "h": 3600.0}
_NUM = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*([a-zA-Z]*)\s*$")


def _split(text: str, what: str) -> tuple[float, str]:
    m = _NUM.match(str(text))
    if not m:
        raise ValidationError(f"cannot parse {what} {text!r}")
    return float(m.group(1)), m.group(2).lower()


def parse_size(text) -> int:
    """``500KB`` -> 500000 bytes; bare numbers are bytes."""
    if isinstance(text, (int, float)):
        value, unit = float(text), ""
    else:
        value, unit = _split(text, "block size")
    if unit not in _SIZE:
        raise ValidationError(f"unknown size unit {unit!r} in {text!r}; use B, KB or MB")
    n = value * _SIZE[unit]
    if n <= 0 or n != int(n):
        raise ValidationError(f"block size must be a positive whole number of bytes, got {text!r}")
    return int(n)


def parse_interval(text) -> float:
    """``60s`` / ``1m`` / ``1.5m`` -> seconds; bare numbers are seconds."""
    if isinstance(text, (int, float)):
        value, unit = float(text), ""
    else:
        value, unit = _split(text, "interval")
    if unit not in _TIME:
        raise ValidationError(f"unknown time unit {unit!r} in {text!r}; use s, m or h")
    secs = value * _TIME[unit]
    if not secs > 0:
        raise ValidationError(f"interval must be positive, got {text!r}")
    return secs


def parse_seeds(text) -> list[int]:
    """``1..5`` -> [1, 2, 3, 4, 5]; also ``7``, ``1,4,9`` and mixtures like ``1..3,8``."""
    seeds: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        try:
            if ".." in part:
                a, b = part.split("..", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise ValidationError(f"empty seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ValidationError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ValidationError("no seeds given")
    return seeds


def format_seeds(seeds) -> str:
    seeds = list(seeds)
    if len(seeds) > 1 and seeds == list(range(seeds[0], seeds[-1] + 1)):
        return f"{seeds[0]}..{seeds[-1]}"
    return " ".join(str(s) for s in seeds)


def format_size(n: int) -> str:
    if n >= 1_000_000 and n % 1_000_000 == 0:
        return f"{n // 1_000_000}MB"
    if n >= 1_000 and n % 1_000 == 0:
        return f"{n // 1_000}KB"
    return f"{n}B"


def format_interval(secs: float) -> str:
    if secs >= 60 and secs % 6 == 0:
        m = secs / 60
        return f"{m:g}m"
    return f"{secs:g}s"
