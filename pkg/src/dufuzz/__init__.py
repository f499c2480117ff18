"""Grey-box fuzzing guided by def-use chain coverage."""

from __future__ import annotations

__version__ = "0.1.0"
