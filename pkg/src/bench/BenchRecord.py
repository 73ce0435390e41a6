import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import List, Sequence, Union

from src.errors import ContractViolation


@dataclass(frozen=True)
class BenchRecord:
    mode: str
    n_frames: int
    tokens_per_frame: int
    steps: int
    wall_ms: float
    flops_model: int
    peak_resident_minibatches: int
    seed: int

    def __post_init__(self):
        if self.wall_ms < 0:
            raise ContractViolation(f"wall_ms must be >= 0, got {self.wall_ms}")

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_row(cls, row: dict) -> "BenchRecord":
        missing = [c for c in cls.columns() if row.get(c) in (None, "")]
        if missing:
            raise ContractViolation(f"CSV row is missing {missing}")
        return cls(row["mode"], int(row["n_frames"]), int(row["tokens_per_frame"]), int(row["steps"]),
                   float(row["wall_ms"]), int(row["flops_model"]), int(row["peak_resident_minibatches"]),
                   int(row["seed"]))


def append_records(path: Union[str, Path], records: Sequence[BenchRecord]):
    """Appends rows, writing the header only when the file is new or empty."""
    path = Path(path)
    write_header = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as f:
        writer = csv.writer(f)
        if write_header:
            writer.writerow(BenchRecord.columns())
        for record in records:
            writer.writerow(astuple(record))


def read_records(path: Union[str, Path]) -> List[BenchRecord]:
    with Path(path).open(newline="") as f:
        return [BenchRecord.from_row(row) for row in csv.DictReader(f)]
