"""Reference rate functions in exact rational arithmetic.

``f_d(gamma)`` is the tentacle-volume exponent, ``g_d`` its fixed point and
``h_d(delta)`` the atypical-potential exponent. Arguments given as ``Fraction``
or ``int`` (or decimal strings) are evaluated exactly; floats are converted
exactly by ``Fraction(float)``.
"""

from __future__ import annotations

import csv
import io
from fractions import Fraction

from .._validation import ParameterError

__all__ = ["as_fraction", "f_rate", "g_rate", "h_rate", "kinks", "rate_eval", "rate_table", "rates_csv"]


def as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise ParameterError("expected a number")
    try:
        return Fraction(x)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"not a rational number: {x!r}") from exc


def _dim(d):
    if int(d) != d or d < 3:
        raise ParameterError(f"dimension must be an integer >= 3, got {d}")
    return int(d)


def kinks(d):
    """Points where ``f_d`` changes slope."""
    d = _dim(d)
    if d == 3:
        return (Fraction(1),)
    if d == 4:
        return (Fraction(4, 3), Fraction(3, 2))
    return (Fraction(2),)


def f_rate(d, gamma):
    d = _dim(d)
    g = as_fraction(gamma)
    if g < 0:
        raise ParameterError("gamma must be nonnegative")
    if d == 3:
        return 3 - 2 * g if g <= 1 else Fraction(1)
    if d == 4:
        if g <= Fraction(4, 3):
            return 2 - g / 2
        return 4 - 2 * g if g <= Fraction(3, 2) else Fraction(1)
    return 1 + (2 - g) / (d - 2) if g <= 2 else Fraction(1)


def g_rate(d):
    d = _dim(d)
    return Fraction(1) if d == 3 else 1 + Fraction(1, d - 1)


def h_rate(d, delta):
    d = _dim(d)
    delta = as_fraction(delta)
    if delta <= 0:
        raise ParameterError("delta must be positive")
    return 1 + delta / (d - 2)


def rate_eval(d, x=None, which="f"):
    """Dispatch to ``f`` (argument gamma), ``g`` (no argument) or ``h`` (argument delta)."""
    if which == "f":
        return f_rate(d, x)
    if which == "g":
        return g_rate(d)
    if which == "h":
        return h_rate(d, x)
    raise ParameterError(f"unknown rate function {which!r}")


def rate_table(dims=(3, 4, 5, 6), gamma_max=3, step=Fraction(1, 100)):
    """Rows ``(d, gamma, f_d(gamma))`` on an exact grid."""
    step = as_fraction(step)
    n = int(as_fraction(gamma_max) / step)
    return [(d, i * step, f_rate(d, i * step)) for d in dims for i in range(n + 1)]


def rates_csv(rows):
    """CSV with exact ``p/q`` strings and float columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "gamma", "f", "gamma_float", "f_float"])
    for d, g, f in rows:
        w.writerow([d, str(g), str(f), repr(float(g)), repr(float(f))])
    return buf.getvalue()
