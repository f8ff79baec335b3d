"""
Uptime matrix: which relay was listed in which consensus, with columns
ordered by single-linkage clustering under d(r) = 1 - pearson(r) and
rendered as binary PPM images. Black is online, white offline, red marks
online cells of adjacent relays with bitwise-identical uptime.
"""
import logging
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from document_storage import DocumentStorage
from errors import LengthMismatch
from models import Consensus

logger = logging.getLogger(__name__)

BLACK = (0, 0, 0)
RED = (255, 0, 0)
WHITE = 255
ROW_BLOCK = 512


@dataclass(frozen=True)
class UptimeMatrix:
    """cells[r][c] is True iff relay c is listed in consensus r"""
    relays: Tuple[str, ...]
    timestamps: Tuple[datetime, ...]
    cells: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.cells.shape


@dataclass(frozen=True)
class MergeStep:
    left: int
    right: int
    distance: float
    size: int


@dataclass(frozen=True)
class ColumnOrder:
    """Display order of columns; identical_runs are [start, stop) display positions"""
    permutation: Tuple[int, ...]
    identical_runs: Tuple[Tuple[int, int], ...]
    merges: Tuple[MergeStep, ...] = ()


def build_matrix(consensuses: Sequence[Consensus]) -> UptimeMatrix:
    if not consensuses:
        raise ValueError("uptime matrix needs at least one consensus")
    for before, after in zip(consensuses, consensuses[1:]):
        if after.valid_after <= before.valid_after:
            raise ValueError(f"consensus stream not strictly increasing at {after.valid_after.isoformat()}")

    relays = sorted(set().union(*(c.statuses.keys() for c in consensuses)))
    column = {fp: index for index, fp in enumerate(relays)}
    cells = np.zeros((len(consensuses), len(relays)), dtype=bool)
    for row, consensus in enumerate(consensuses):
        cells[row, [column[fp] for fp in consensus.statuses]] = True
    logger.info("uptime matrix: %d consensuses x %d relays", *cells.shape)
    return UptimeMatrix(tuple(relays), tuple(c.valid_after for c in consensuses), cells)


def _correlation(n: int, ones_a: int, ones_b: int, both: int) -> float:
    var_a = ones_a * (n - ones_a)
    var_b = ones_b * (n - ones_b)
    if var_a == 0 and var_b == 0:
        return 1.0 if ones_a == ones_b else -1.0
    if var_a == 0 or var_b == 0:
        return 0.0
    return (n * both - ones_a * ones_b) / math.sqrt(var_a * var_b)


def pearson(a: Sequence[bool], b: Sequence[bool]) -> float:
    """Sample correlation of two 0/1 sequences, with fixed values for constant ones"""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.ndim != 1 or a.shape != b.shape:
        raise LengthMismatch(f"sequences of length {a.size} and {b.size}")
    if a.size < 2:
        raise LengthMismatch("correlation needs at least two observations")
    return _correlation(int(a.size), int(a.sum()), int(b.sum()), int((a & b).sum()))


def distance_matrix(cells: np.ndarray) -> np.ndarray:
    """Pairwise 1 - pearson over columns, diagonal set to +inf"""
    n, m = cells.shape
    x = cells.astype(np.float64)
    ones = x.sum(axis=0)
    variance = ones * (n - ones)
    constant = variance == 0
    # Integer-valued float64 products below 2**53 are exact, so every entry
    # matches the scalar pearson() bit for bit.
    result = x.T @ x
    for start in range(0, m, ROW_BLOCK):
        stop = min(start + ROW_BLOCK, m)
        numerator = n * result[start:stop] - ones[start:stop, None] * ones[None, :]
        denominator = np.sqrt(variance[start:stop, None] * variance[None, :])
        with np.errstate(divide='ignore', invalid='ignore'):
            block = numerator / denominator
        block_constant = constant[start:stop, None]
        one_constant = block_constant ^ constant[None, :]
        both_constant = block_constant & constant[None, :]
        block[one_constant] = 0.0
        same = ones[start:stop, None] == ones[None, :]
        block[both_constant & same] = 1.0
        block[both_constant & ~same] = -1.0
        result[start:stop] = 1.0 - block
    np.fill_diagonal(result, np.inf)
    return result


def cluster_order(matrix: UptimeMatrix) -> ColumnOrder:
    """
    Single-linkage agglomeration. Each cluster is represented by its lowest
    column index; the closest pair (ties: lowest left, then lowest right
    representative) merges next, and the cluster holding the lower index is
    placed left in the leaf order.
    """
    columns = matrix.cells.shape[1]
    if columns == 0:
        raise ValueError("cannot order an uptime matrix without columns")
    distances = distance_matrix(matrix.cells)
    members: List = [[c] for c in range(columns)]
    row_min = distances.min(axis=1)
    row_arg = distances.argmin(axis=1)
    merges = []

    for _ in range(columns - 1):
        left = int(np.argmin(row_min))
        right = int(row_arg[left])
        merged = members[left] + members[right]
        members[left], members[right] = merged, None
        merges.append(MergeStep(left, right, float(row_min[left]), len(merged)))

        linkage = np.minimum(distances[left], distances[right])
        linkage[left] = linkage[right] = np.inf
        distances[left, :] = linkage
        distances[:, left] = linkage
        distances[right, :] = np.inf
        distances[:, right] = np.inf

        # A row whose minimum sat in the absorbed column keeps its value, now at
        # `left`; rows tying their minimum at the lower `left` index move there.
        moved = (row_arg == right) | ((linkage == row_min) & (row_arg > left))
        row_arg[moved] = left
        row_min[right] = np.inf
        row_min[left] = linkage.min()
        row_arg[left] = linkage.argmin()

    permutation = tuple(members[0])
    runs = identical_runs(matrix.cells, permutation)
    logger.info("clustered %d columns, %d identical runs", columns, len(runs))
    return ColumnOrder(permutation=permutation, identical_runs=runs, merges=tuple(merges))


def identical_runs(cells: np.ndarray, permutation: Sequence[int]) -> Tuple[Tuple[int, int], ...]:
    """Maximal [start, stop) display ranges of length >= 2 with bitwise-equal columns"""
    ordered = cells[:, list(permutation)]
    runs = []
    start = 0
    for position in range(1, len(permutation) + 1):
        if position < len(permutation) and np.array_equal(ordered[:, position], ordered[:, position - 1]):
            continue
        if position - start >= 2:
            runs.append((start, position))
        start = position
    return tuple(runs)


def render(matrix: UptimeMatrix, order: ColumnOrder, max_width: int) -> List[bytes]:
    """Binary PPM images of at most max_width columns each"""
    if max_width < 1:
        raise ValueError(f"image width must be >= 1, got {max_width}")
    if sorted(order.permutation) != list(range(matrix.cells.shape[1])):
        raise ValueError("column order does not cover every column")

    ordered = matrix.cells[:, list(order.permutation)]
    in_run = np.zeros(ordered.shape[1], dtype=bool)
    for start, stop in order.identical_runs:
        in_run[start:stop] = True

    pixels = np.full(ordered.shape + (3,), WHITE, dtype=np.uint8)
    pixels[ordered & ~in_run[None, :]] = BLACK
    pixels[ordered & in_run[None, :]] = RED

    images = []
    rows = ordered.shape[0]
    for start in range(0, ordered.shape[1], max_width):
        chunk = np.ascontiguousarray(pixels[:, start:start + max_width])
        header = f"P6\n{chunk.shape[1]} {rows}\n255\n".encode('ascii')
        images.append(header + chunk.tobytes())
    return images


def column_frame(matrix: UptimeMatrix, order: ColumnOrder, max_width: int) -> pd.DataFrame:
    """Display position -> fingerprint, image chunk and identical-run id"""
    run_of = {}
    for run_id, (start, stop) in enumerate(order.identical_runs):
        for position in range(start, stop):
            run_of[position] = run_id
    rows = [{
        "position": position,
        "image": position // max_width,
        "column": column,
        "fingerprint": matrix.relays[column],
        "identical_run": run_of.get(position, ""),
    } for position, column in enumerate(order.permutation)]
    return pd.DataFrame(rows, columns=["position", "image", "column", "fingerprint", "identical_run"])


def write_images(storage: DocumentStorage, matrix: UptimeMatrix, order: ColumnOrder, max_width: int) -> List[Path]:
    """uptime-<start-date>-<chunk>.ppm files plus the column map CSV"""
    start_date = matrix.timestamps[0].strftime('%Y-%m-%d')
    paths = [storage.save_bytes(image, f"uptime-{start_date}-{index}.ppm")
             for index, image in enumerate(render(matrix, order, max_width))]
    paths.append(storage.save_frame(column_frame(matrix, order, max_width), f"uptime-{start_date}-columns.csv"))
    return paths


def identical_fingerprints(matrix: UptimeMatrix, order: ColumnOrder) -> List[str]:
    """Fingerprints inside any identical run"""
    return [matrix.relays[order.permutation[p]] for start, stop in order.identical_runs for p in range(start, stop)]
