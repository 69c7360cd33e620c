"""Numba acceleration toggle.

Hot kernels in this package are written twice where the shapes allow it
(vectorized numpy vs. an njit loop) or once as a loop that numba compiles.
Which path runs is decided once, at import time:

  * default: use numba if it imports cleanly
  * ``LMDAN_DISABLE_NUMBA=1`` forces the pure-numpy / interpreted path

Both paths are deterministic; they agree to float round-off (and exactly,
for kernels whose fallback is the same function left uncompiled).
"""

import os

ENV_FLAG = "LMDAN_DISABLE_NUMBA"


def _probe() -> bool:
    if os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _probe()

if NUMBA_ENABLED:
    from numba import njit
else:

    def njit(*args, **kwargs):
        """Identity stand-in for numba.njit (bare and parametrized forms)."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap
