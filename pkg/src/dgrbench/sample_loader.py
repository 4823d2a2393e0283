from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

from dgrbench.errors import DemSyntaxError
from dgrbench.sampler import Shot

_SHOT_RE = re.compile(r"^shot\s+(\d+)\s+D:([0-9a-fA-F]+)\s+L:([0-9a-fA-F]+)$")

PathLike = Union[str, Path]


def _bits(mask: int) -> tuple[int, ...]:
    out = []
    k = 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return tuple(out)


def format_shot(shot: Shot) -> str:
    return f"shot {shot.index} D:{shot.detector_mask():x} L:{shot.observables:x}"


def parse_shot(line: str, lineno: int = 0) -> Shot:
    match = _SHOT_RE.match(line.strip())
    if not match:
        raise DemSyntaxError(f"malformed shot line {line.strip()!r}", lineno or None, 1)
    return Shot(int(match.group(1)), _bits(int(match.group(2), 16)), int(match.group(3), 16))


def write_shot_dump(path: PathLike, shots: Iterable[Shot]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for shot in shots:
            handle.write(format_shot(shot) + "\n")
            count += 1
    return count


def iter_shot_dump(path: PathLike) -> Iterator[Shot]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            yield parse_shot(line, lineno)


def read_shot_dump(path: PathLike) -> list[Shot]:
    return list(iter_shot_dump(path))


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def chunked(start: int, stop: int, size: int) -> Iterator[tuple[int, int]]:
    for lo in range(start, stop, size):
        yield lo, min(lo + size, stop)
