from __future__ import annotations

import pytest

from dufuzz.analysis import analyze
from dufuzz.corpus import provide_targets
from dufuzz.selection import select_chains


@pytest.fixture(scope="session")
def targets():
    return provide_targets()


@pytest.fixture(scope="session")
def analyzed(targets):
    """name -> (manifest, program, full chain file, default selection)."""
    out = {}
    for name, t in targets.items():
        full = analyze(t.program)
        out[name] = (t, t.program, full, select_chains(full, t.program))
    return out
