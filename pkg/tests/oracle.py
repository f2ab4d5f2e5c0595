"""Independent arbitrary-precision oracles for the minifloat tests.

Nothing here imports the rounding code under test: values are decoded
straight from the bit layout, arithmetic goes through MPFR (gmpy2) with an
IEEE-shaped context, and results are re-encoded through struct / lookup
tables built from the oracle's own decoder.
"""

from __future__ import annotations

import itertools
import struct
from fractions import Fraction
from functools import lru_cache

import gmpy2
import numpy as np

# exact enough for any sum of FP64 products
_EXACT = gmpy2.context(precision=4400, emin=-(1 << 20), emax=1 << 20)


def layout(name: str) -> tuple[int, int]:
    return {
        "FP64": (11, 52), "FP32": (8, 23), "FP16": (5, 10),
        "FP16ALT": (8, 7), "FP8": (5, 2), "FP8ALT": (4, 3),
    }[name]


def oracle_decode(name: str, raw: int):
    """Fraction for finite values, else 'nan' / '+inf' / '-inf'."""
    eb, mb = layout(name)
    w = 1 + eb + mb
    bias = (1 << (eb - 1)) - 1
    sign = -1 if raw >> (w - 1) else 1
    e = (raw >> mb) & ((1 << eb) - 1)
    m = raw & ((1 << mb) - 1)
    if e == (1 << eb) - 1:
        return "nan" if m else ("-inf" if sign < 0 else "+inf")
    if e == 0:
        return sign * Fraction(m, 1 << mb) * Fraction(2) ** (1 - bias)
    return sign * (1 + Fraction(m, 1 << mb)) * Fraction(2) ** (e - bias)


@lru_cache(maxsize=None)
def _ctx(name: str):
    eb, mb = layout(name)
    bias = (1 << (eb - 1)) - 1
    return gmpy2.context(precision=mb + 1, emin=2 - bias - mb, emax=bias + 1,
                         subnormalize=True, round=gmpy2.RoundToNearest)


def _to_mpfr(name: str, raw: int):
    if name == "FP64":
        return gmpy2.mpfr(struct.unpack("<d", struct.pack("<Q", raw))[0])
    if name == "FP32":
        return gmpy2.mpfr(struct.unpack("<f", struct.pack("<I", raw))[0])
    return _small_mpfr(name)[raw]


@lru_cache(maxsize=None)
def _small_mpfr(name: str) -> tuple:
    eb, mb = layout(name)
    return tuple(_to_mpfr_slow(name, r) for r in range(1 << (1 + eb + mb)))


def _to_mpfr_slow(name: str, raw: int):
    v = oracle_decode(name, raw)
    eb, mb = layout(name)
    neg_zero = raw == 1 << (eb + mb)
    with gmpy2.context(_EXACT):
        if v == "nan":
            return gmpy2.nan()
        if v == "+inf":
            return gmpy2.inf()
        if v == "-inf":
            return -gmpy2.inf()
        if v == 0:
            return -gmpy2.mpfr(0) if neg_zero else gmpy2.mpfr(0)
        return gmpy2.mpfr(gmpy2.mpq(v.numerator, v.denominator))


@lru_cache(maxsize=None)
def _value_to_raw(name: str) -> dict:
    eb, mb = layout(name)
    table = {}
    for raw in range(1 << (1 + eb + mb)):
        v = oracle_decode(name, raw)
        if isinstance(v, Fraction) and v != 0:
            table[float(v)] = raw
    return table


def _from_mpfr(name: str, r) -> int:
    eb, mb = layout(name)
    w = 1 + eb + mb
    sign = (1 << (w - 1)) if gmpy2.is_signed(r) else 0
    if gmpy2.is_nan(r):
        return (((1 << eb) - 1) << mb) | (1 << (mb - 1))
    if gmpy2.is_infinite(r):
        return sign | (((1 << eb) - 1) << mb)
    if gmpy2.is_zero(r):
        return sign
    v = float(r)  # exact: r already carries the target precision
    if name == "FP64":
        return struct.unpack("<Q", struct.pack("<d", v))[0]
    if name == "FP32":
        return struct.unpack("<I", struct.pack("<f", v))[0]
    return _value_to_raw(name)[v]


def _round(name: str, exact_op):
    with gmpy2.context(_ctx(name)):
        r = exact_op()
    return _from_mpfr(name, r)


def oracle_fma(name: str, a: int, b: int, c: int) -> int:
    x, y, z = (_to_mpfr(name, v) for v in (a, b, c))
    return _round(name, lambda: gmpy2.fma(x, y, z))


def oracle_add3(name: str, a: int, b: int, c: int) -> int:
    x, y, z = (_to_mpfr(name, v) for v in (a, b, c))
    with gmpy2.context(_EXACT):
        s = x + y
    return _round(name, lambda: s + z)


def oracle_sdotp(src: str, dst: str, a: int, b: int, c: int, d: int, acc: int) -> int:
    xa, xb, xc, xd = (_to_mpfr(src, v) for v in (a, b, c, d))
    xacc = _to_mpfr(dst, acc)
    with gmpy2.context(_EXACT):
        s = xa * xb + xc * xd
    return _round(dst, lambda: s + xacc)


def oracle_convert(src: str, dst: str, raw: int) -> int:
    x = _to_mpfr(src, raw)
    return _round(dst, lambda: +x)


# ---------------------------------------------------------------------------
# vectorised nearest-value oracle for the 8-bit formats

@lru_cache(maxsize=None)
def _positive_table(name: str) -> tuple[np.ndarray, float]:
    eb, mb = layout(name)
    inf_raw = ((1 << eb) - 1) << mb
    vals = np.array([float(oracle_decode(name, r)) for r in range(inf_raw)])
    top = vals[-1]
    half_ulp = (vals[-1] - vals[-2]) / 2
    return vals, top + half_ulp


def nearest_raw(name: str, x: np.ndarray) -> np.ndarray:
    """Brute-force RNE: pick the closest encoding, ties to the even one."""
    eb, mb = layout(name)
    w = 1 + eb + mb
    vals, overflow_at = _positive_table(name)
    ax = np.abs(x)
    fin = np.isfinite(x)
    safe = np.where(fin, ax, 0.0)
    hi = np.clip(np.searchsorted(vals, safe), 0, len(vals) - 1)
    lo = np.clip(hi - 1, 0, len(vals) - 1)
    dlo = np.abs(safe - vals[lo])
    dhi = np.abs(vals[hi] - safe)
    pick = np.where(dlo < dhi, lo, np.where(dhi < dlo, hi, np.where(lo % 2 == 0, lo, hi)))
    out = pick.astype(np.int64)
    inf_raw = ((1 << eb) - 1) << mb
    out = np.where(fin & (safe >= overflow_at), inf_raw, out)
    out = np.where(np.isinf(x), inf_raw, out)
    out = out | (np.signbit(x).astype(np.int64) << (w - 1))
    out = np.where(np.isnan(x), inf_raw | (1 << (mb - 1)), out)
    return out


def decoded_array(name: str) -> np.ndarray:
    eb, mb = layout(name)
    out = []
    for r in range(1 << (1 + eb + mb)):
        v = oracle_decode(name, r)
        if v == "nan":
            out.append(np.nan)
        elif v == "+inf":
            out.append(np.inf)
        elif v == "-inf":
            out.append(-np.inf)
        elif v == 0 and r:
            out.append(-0.0)
        else:
            out.append(float(v))
    return np.array(out)


def two_pointer_count(a, b):
    """Standalone comparison counter: steps while both lists have elements."""
    i = j = n = 0
    while i < len(a) and j < len(b):
        n += 1
        if a[i] == b[j]:
            i, j = i + 1, j + 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return n


def nested_loop_addresses(base, bounds, strides):
    """Addresses of an affine stream, dimension 0 innermost."""
    out = []
    ranges = [range(b) for b in reversed(bounds)]  # outermost first
    for idx in itertools.product(*ranges):
        ii = list(reversed(idx))
        out.append(base + sum(i * s for i, s in zip(ii, strides)))
    return out
