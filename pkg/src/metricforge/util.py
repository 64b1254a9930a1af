"""Small shared helpers: atomic file writes, seed derivation, float formatting."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np


@contextmanager
def atomic_write(path, binary: bool = False):
    """Write to a temp file in the target directory, rename into place on success.

    Guarantees no partial file is left behind if writing fails mid-way.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w", **({} if binary else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def derive_seed(master_seed: int, stage: int) -> int:
    """Deterministic per-stage sub-seed from one master seed.

    Uses numpy's SeedSequence spawning so stages get statistically independent
    streams while the whole run remains a pure function of the master seed.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stage),))
    return int(ss.generate_state(1, np.uint64)[0])


def fmt_float(x: float) -> str:
    """9 significant digits: exact for float32 payloads, compact for reports."""
    return f"{float(x):.9g}"
