"""Backend selection for the batched coding kernels.

The compiled extension is preferred when it imported cleanly; the NumPy
reference implements identical iteration math and is always available.
Set ``BCGBEAT_DISABLE_EXT=1`` to force the reference path (used by the
benchmark and by tests that compare the two).
"""

import os

from . import _reference

__all__ = ["BACKEND", "ista_negative", "ista_positive", "reference"]

reference = _reference

if os.environ.get("BCGBEAT_DISABLE_EXT", "") == "1":
    _impl = _reference
    BACKEND = "numpy"
else:
    try:
        from . import _fastpath as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _reference
        BACKEND = "numpy"

ista_negative = _impl.ista_negative
ista_positive = _impl.ista_positive
