from pathlib import Path
from typing import Sequence, Union

import numpy as np

from src.bench.BenchRecord import BenchRecord, read_records
from src.errors import ContractViolation

MIN_DISTINCT_SIZES = 3


def fit_scaling_exponent(source: Union[str, Path, Sequence[BenchRecord]], mode: str,
                         column: str = "wall_ms") -> float:
    """Least-squares slope of log(column) against log(n_frames) over all rows of `mode`."""
    records = read_records(source) if isinstance(source, (str, Path)) else list(source)
    rows = [r for r in records if r.mode == mode]
    sizes = {r.n_frames for r in rows}
    if len(sizes) < MIN_DISTINCT_SIZES:
        raise ContractViolation(
            f"need rows for at least {MIN_DISTINCT_SIZES} distinct n_frames in mode {mode!r}, got {sorted(sizes)}")
    x = np.log([r.n_frames for r in rows])
    y = np.array([float(getattr(r, column)) for r in rows])
    if np.any(y <= 0):
        raise ContractViolation(f"{column} must be positive to fit a log-log slope")
    slope, _ = np.polyfit(x, np.log(y), 1)
    return float(slope)
