"""Small numerical helpers shared by the tests."""

from scipy.optimize import brentq


def sign_change(f, lo, hi, xtol=1e-3):
    """Root of ``f`` in ``[lo, hi]``; asserts the bracket first."""
    flo, fhi = f(lo), f(hi)
    assert flo > 0 > fhi, (lo, flo, hi, fhi)
    return brentq(f, lo, hi, xtol=xtol)
