import re
from fractions import Fraction

from errors import ConfigurationError

_SUPPORT_ATOM = re.compile(r"^\s*([+-]?\d+)\s*:\s*([0-9./eE+-]+)\s*$")
_PAIR = re.compile(r"^\s*([0-9.eE+-]+)\s*:\s*([0-9.eE+-]+)\s*$")


def parse_support(text):
    """Parse a finite law written as 'value:prob, value:prob' into {int: Fraction}"""
    support = {}
    for atom in filter(None, (part.strip() for part in str(text).split(","))):
        match = _SUPPORT_ATOM.match(atom)
        if not match:
            raise ConfigurationError(f"Cannot parse support atom {atom!r}")
        value = int(match.group(1))
        try:
            prob = Fraction(match.group(2))
        except (ValueError, ZeroDivisionError):
            raise ConfigurationError(f"Cannot parse probability in {atom!r}")
        if value in support:
            raise ConfigurationError(f"Support value {value} listed twice")
        support[value] = prob
    if not support:
        raise ConfigurationError("Empty support")
    return support


def parse_int_list(text):
    """'50, 100,200' -> [50, 100, 200]"""
    try:
        return [int(part) for part in str(text).replace(";", ",").split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"Expected a list of integers, got {text!r}")


def parse_float_list(text):
    """'0.5, 1, 2' -> [0.5, 1.0, 2.0]"""
    try:
        return [float(part) for part in str(text).replace(";", ",").split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"Expected a list of numbers, got {text!r}")


def parse_pairs(text):
    """'0.5:1, 1:2' -> [(0.5, 1.0), (1.0, 2.0)]"""
    pairs = []
    for atom in filter(None, (part.strip() for part in str(text).split(","))):
        match = _PAIR.match(atom)
        if not match:
            raise ConfigurationError(f"Cannot parse pair {atom!r}")
        pairs.append((float(match.group(1)), float(match.group(2))))
    return pairs


def parse_name_list(text):
    return [part.strip() for part in str(text).split(",") if part.strip()]


def format_bytes(size_bytes):
    """Human readable memory size"""
    for unit in ("B", "KB", "MB", "GB"):
        if size_bytes < 1024:
            return f"{size_bytes:.1f}{unit}"
        size_bytes /= 1024
    return f"{size_bytes:.1f}TB"
