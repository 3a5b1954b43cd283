"""fracbern: integro-differential operators, extensions, and the
auxiliary-function (Bernstein) machinery around them, at desk scale."""

__version__ = "0.1.0"

from . import (kernels, funcspace, nonlocal_ops, extension, bernstein,  # noqa: F401
               solvers, harness)
