import pytest

from powmesh.errors import ValidationError
from powmesh.units import format_interval, format_seeds, format_size, parse_interval, parse_seeds, parse_size


@pytest.mark.parametrize(
    "text,expected",
    [("500KB", 500_000), ("1MB", 1_000_000), ("10 kb", 10_000), ("1.5MB", 1_500_000), ("250", 250), ("64B", 64)],
)
def test_parse_size(text, expected):
    assert parse_size(text) == expected


@pytest.mark.parametrize("text", ["", "KB", "5XB", "-1KB", "0", "0.5B"])
def test_parse_size_rejects(text):
    with pytest.raises(ValidationError):
        parse_size(text)


@pytest.mark.parametrize(
    "text,expected", [("60s", 60.0), ("1m", 60.0), ("1.5m", 90.0), ("100m", 6000.0), ("90", 90.0), ("1h", 3600.0)]
)
def test_parse_interval(text, expected):
    assert parse_interval(text) == expected


@pytest.mark.parametrize("text", ["0s", "fast", "5d"])
def test_parse_interval_rejects(text):
    with pytest.raises(ValidationError):
        parse_interval(text)


def test_seed_ranges():
    assert parse_seeds("1..5") == [1, 2, 3, 4, 5]
    assert parse_seeds("7..7") == [7]
    assert parse_seeds("1,4,9") == [1, 4, 9]
    assert parse_seeds("1..3,8") == [1, 2, 3, 8]
    for bad in ("5..1", "a..b", ""):
        with pytest.raises(ValidationError):
            parse_seeds(bad)


def test_formatting():
    assert format_seeds([1, 2, 3]) == "1..3"
    assert format_seeds([1, 4]) == "1 4"
    assert format_size(500_000) == "500KB"
    assert format_size(10_000_000) == "10MB"
    assert [format_interval(s) for s in (180, 90, 60, 30, 12, 600)] == ["3m", "1.5m", "1m", "30s", "12s", "10m"]
