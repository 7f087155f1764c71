"""Small shared helpers: errors, warning categories, seeded RNG streams."""

import zlib

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or parameter combination."""


class ValidityWarning(UserWarning):
    """A closed-form statistic was evaluated outside its validity domain."""


class AliasingWarning(UserWarning):
    """A propagation step violates its sampling bound."""


class ClippingWarning(UserWarning):
    """A spectrum or kernel had to be clipped to stay nonnegative."""


def stream(seed, tag, *index):
    """Counter-based generator for the stream addressed by (seed, tag, index...).

    The tag is hashed with CRC32 so that different modules never share a
    stream; the index tuple addresses individual draws (screen number, frame
    number, ...) so parallel generation is order independent.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode("utf-8"))]
    key.extend(int(i) for i in index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def is_pow2(n):
    return n >= 2 and (n & (n - 1)) == 0
