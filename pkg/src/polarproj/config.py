"""Library-level strict/permissive switch.

Strict mode turns recoverable physical-consistency violations (DoLP above
1 beyond tolerance, unknown JSON fields) into errors instead of warnings.
It is off by default, can be enabled with ``POLARPROJ_STRICT=1`` in the
environment, and is mirrored by the CLI ``--strict`` flag.
"""

import os

_strict = os.environ.get("POLARPROJ_STRICT", "") == "1"


def set_strict(flag):
    """Enable or disable strict mode for the whole process."""
    global _strict
    _strict = bool(flag)


def is_strict():
    return _strict
