"""Working-precision management.

All numerics run through mpmath. Every public object carries the binary
precision it was built at; computations execute inside ``working(bits)``
which adds guard bits so that delivered results are good to the nominal
precision. Decimal string I/O goes through the helpers here so that
config files and reports never touch binary floats.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from mpmath import mp, mpf, mpc

DEFAULT_PRECISION_BITS = 256
GUARD_BITS = 32
PRECISION_ENV_VAR = "NIKISHIN_PRECISION_BITS"


def default_precision_bits() -> int:
    """Default precision, overridable via the environment."""
    raw = os.environ.get(PRECISION_ENV_VAR)
    if raw is None:
        return DEFAULT_PRECISION_BITS
    bits = int(raw)
    if bits < 64:
        raise ValueError(f"{PRECISION_ENV_VAR} must be >= 64, got {bits}")
    return bits


@contextmanager
def working(bits: int, extra: int = 0):
    """Run a block at ``bits`` plus guard precision."""
    with mp.workprec(bits + GUARD_BITS + extra):
        yield


def tolerance(bits: int, slack_bits: int = 16) -> mpf:
    """2^(-bits+slack): the generic relative-accuracy budget at ``bits``."""
    return mpf(2) ** (-bits + slack_bits)


def from_decimal(text: str, bits: int) -> mpf:
    with working(bits):
        return mpf(text)


def complex_from_pair(pair, bits: int) -> mpc:
    re, im = pair
    with working(bits):
        return mpc(mpf(str(re)), mpf(str(im)))


def decimal_digits(bits: int) -> int:
    return int(bits * 0.30103) + 2


def to_decimal(x, bits: int) -> str:
    """Decimal string carrying the full precision of ``x``."""
    return mp.nstr(mpf(x), decimal_digits(bits), strip_zeros=True)


def complex_to_pair(z, bits: int) -> list[str]:
    z = mpc(z)
    return [to_decimal(z.real, bits), to_decimal(z.imag, bits)]
