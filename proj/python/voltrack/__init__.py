"""Multi-camera volumetric 3D point tracking.

Thin wrapper around the compiled extension; build it with CMake
(`-DVOLTRACK_PYTHON=ON`, the default) and put the build's `python/`
directory on PYTHONPATH.
"""

try:
    from ._voltrack import *  # noqa: F401,F403
    from ._voltrack import __doc__  # noqa: F401
except ImportError as exc:  # pragma: no cover
    raise ImportError(
        "the _voltrack extension is missing; build the project with CMake "
        "and add <build>/python to PYTHONPATH"
    ) from exc
