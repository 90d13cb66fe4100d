"""Figure rendering for metamorph CLI artifacts.

Pure consumer of the documented CSV/PGM artifact formats; no numerical
logic. Plot generation never mutates inputs and is idempotent.
"""

from .plotting import SchemaError, plot_separation, plot_snapshots

__version__ = "0.1.0"

__all__ = ["SchemaError", "plot_separation", "plot_snapshots"]
