"""pathdens: a numerical laboratory for path-dependent SDEs.

Lifted flows, Malliavin covariance matrices, vertical-derivative Lie
brackets and spanning checks, rough-path verification of the transfer
identity, delay lifts, and terminal-law diagnostics.
"""

from .timegrid import Config, GridPath, MeasureSpec, TimeGrid, build_grid

__all__ = ["Config", "GridPath", "MeasureSpec", "TimeGrid", "build_grid"]
__version__ = "0.1.0"
