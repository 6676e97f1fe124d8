from __future__ import annotations

import numpy as np
import pytest

from therapycert.errors import ConfigError
from therapycert.rng import derive_seed, stream


def test_streams_are_reproducible():
    a = stream(42, "cert", 7).random(5)
    b = stream(42, "cert", 7).random(5)
    np.testing.assert_array_equal(a, b)


def test_streams_differ_by_index_label_and_seed():
    base = stream(42, "cert", 7).random(4)
    for other in (stream(42, "cert", 8), stream(42, "valid", 7), stream(43, "cert", 7)):
        assert not np.array_equal(base, other.random(4))


def test_seed_range():
    derive_seed(2**64 - 1, "cert", 0)
    with pytest.raises(ConfigError):
        derive_seed(-1, "cert", 0)
    with pytest.raises(ValueError):
        derive_seed(0, "cert", -1)
