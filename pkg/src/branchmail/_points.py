"""Tolerance-aware point identification shared by every module."""

from __future__ import annotations

import itertools

import numpy as np

DEFAULT_TOL = 1e-9


class PointIndex:
    """Assigns stable integer ids to points, identifying points within ``tol``.

    Ids are handed out in insertion order and never change, so an index can
    be grown while earlier ids stay valid.  Lookup uses a uniform hash grid
    with cell size ``tol``; two points within ``tol`` always sit in adjacent
    cells.
    """

    def __init__(self, tol: float = DEFAULT_TOL):
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        self.tol = float(tol)
        self._cells: dict[tuple, list[int]] = {}
        self._coords: list[np.ndarray] = []
        self._offsets: list[tuple] | None = None
        self._array: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._coords)

    def _cell(self, p: np.ndarray) -> tuple:
        return tuple(np.floor(p / self.tol).astype(np.int64).tolist())

    def _neighbours(self, cell: tuple):
        if self._offsets is None or len(self._offsets[0]) != len(cell):
            self._offsets = list(itertools.product((-1, 0, 1), repeat=len(cell)))
        for off in self._offsets:
            yield tuple(c + o for c, o in zip(cell, off))

    def find(self, p) -> int | None:
        p = np.asarray(p, dtype=float)
        best, best_d = None, self.tol
        for cell in self._neighbours(self._cell(p)):
            for i in self._cells.get(cell, ()):
                d = float(np.linalg.norm(self._coords[i] - p))
                if d <= best_d:
                    best, best_d = i, d
        return best

    def id(self, p) -> int:
        p = np.asarray(p, dtype=float)
        found = self.find(p)
        if found is not None:
            return found
        i = len(self._coords)
        self._coords.append(p.copy())
        self._cells.setdefault(self._cell(p), []).append(i)
        self._array = None
        return i

    def ids(self, points) -> list[int]:
        return [self.id(p) for p in np.atleast_2d(np.asarray(points, dtype=float))]

    def coords(self, i: int) -> np.ndarray:
        return self._coords[i]

    @property
    def array(self) -> np.ndarray:
        if self._array is None:
            if self._coords:
                self._array = np.array(self._coords)
            else:
                self._array = np.zeros((0, 0))
        return self._array


def lexsort_rows(points: np.ndarray) -> np.ndarray:
    """Indices sorting the rows of ``points`` lexicographically."""
    points = np.atleast_2d(points)
    if points.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return np.lexsort(points.T[::-1])
