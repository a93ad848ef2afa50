"""Small shared helpers for the experiment harness."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map_ordered(
    fn: Callable[[T], R], items: Iterable[T], threads: int = 1
) -> list[R]:
    """Map ``fn`` over ``items``, returning results in submission order.

    With ``threads <= 1`` this is a plain loop.  With more threads the work
    is fanned out but the result list is always ordered like the input, so
    anything accumulated from it is identical for every thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def format_value(v: object) -> str:
    """Canonical text form used in CSV cells and metadata echoes.

    Floats use repr (shortest round-trip form), so output bytes depend only
    on the computed values, never on locale or print settings.
    """
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(
    path: str,
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    header_lines: Sequence[str] = (),
    trailing_comments: Sequence[str] = (),
) -> None:
    """Write a gnuplot-friendly CSV: '#' metadata block, one header row,
    data rows, optional trailing '#' summary lines."""
    out = []
    for line in header_lines:
        out.append(f"# {line}")
    out.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(
                f"row width {len(row)} does not match {len(columns)} columns"
            )
        out.append(",".join(format_value(v) for v in row))
    for line in trailing_comments:
        out.append(f"# {line}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
