"""viaopc: window splitting, lithography simulation, ILT mask optimization,
metrics, and a synthetic data factory for via-layer OPC."""

__version__ = "0.1.0"

from .layout import Layout, LayoutError, LayoutParseError, Rect, Via, Window  # noqa: F401
from .layout import load_layout, save_layout, loads_layout, dumps_layout  # noqa: F401
