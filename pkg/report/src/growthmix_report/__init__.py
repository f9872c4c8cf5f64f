"""Figure rendering for posterior summary CSV directories."""

__version__ = "0.1.0"

from .render import binder_order, render_all

__all__ = ["binder_order", "render_all", "__version__"]
