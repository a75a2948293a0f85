from fractions import Fraction

import pytest

from errors import ConfigurationError
from utils import format_bytes, parse_float_list, parse_int_list, parse_name_list, parse_pairs, parse_support


def test_parse_support():
    assert parse_support("-1:1/2, 1:1/2") == {-1: Fraction(1, 2), 1: Fraction(1, 2)}
    assert parse_support("0:0.25,+2:0.75") == {0: Fraction(1, 4), 2: Fraction(3, 4)}
    with pytest.raises(ConfigurationError):
        parse_support("1:1/2, 1:1/2")
    with pytest.raises(ConfigurationError):
        parse_support("one:1")
    with pytest.raises(ConfigurationError):
        parse_support("")


def test_parse_lists():
    assert parse_int_list("50, 100;200") == [50, 100, 200]
    assert parse_float_list("0.5, 1") == [0.5, 1.0]
    assert parse_pairs("0.5:1, 1:2") == [(0.5, 1.0), (1.0, 2.0)]
    assert parse_name_list(" simple, lazy ,") == ["simple", "lazy"]
    with pytest.raises(ConfigurationError):
        parse_int_list("1.5")
    with pytest.raises(ConfigurationError):
        parse_pairs("0.5-1")


def test_format_bytes():
    assert format_bytes(512) == "512.0B"
    assert format_bytes(2048) == "2.0KB"
