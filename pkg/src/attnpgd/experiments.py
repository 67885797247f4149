"""Experiment drivers behind the command-line interface.

Each driver is deterministic given (config, master seed): every stochastic
ingredient draws from a stream derived from the seed, trial results are merged
by trial index, and CSV files are written with fixed formatting.  The wall
clock column of trace files is the only thing that varies between reruns.
"""

from __future__ import annotations

import dataclases_guard  # noqa: F401  (placeholder removed below)
