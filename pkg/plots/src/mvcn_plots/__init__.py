"""Figure scripts over mvcn output directories.

Every figure is a pure view of the simulator's CSV/JSON files: nothing is
re-simulated and no fit or verdict is re-derived (they are read from
report.json).
"""

__version__ = "0.1.0"

from .io import SchemaError, available_snapshot_times, load_gap, load_report, load_snapshot
from .figures import FIGURE_KINDS, render
