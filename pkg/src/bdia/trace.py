"""Solver trace container and its CSV dump."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from .core import TimeGrid


@dataclass
class EdmTraceEntry:
    index: int
    z: np.ndarray
    z_hat: np.ndarray
    z_tilde: np.ndarray
    d: np.ndarray
    d_prime: Optional[np.ndarray]


@dataclass
class SolverTrace:
    """Ordered record of one solver run.

    ``states`` follow the run direction (descending index when sampling,
    ascending when inverting).  Per-index dictionaries are keyed by the
    index of the state the quantity is conditioned on:

    * ``deltas_fwd[j] = Delta(t_j -> t_{j-1} | z_j)``
    * ``deltas_bwd[j] = Delta(t_j -> t_{j+1} | z_j)``
    * ``eps[j]``      = predictor output used at index ``j``
    """

    solver: str
    grid: TimeGrid
    indices: list[int] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    aux: Optional[list[np.ndarray]] = None
    eps: dict[int, np.ndarray] = field(default_factory=dict)
    deltas_fwd: dict[int, np.ndarray] = field(default_factory=dict)
    deltas_bwd: dict[int, np.ndarray] = field(default_factory=dict)
    internals: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)
    entries: list[EdmTraceEntry] = field(default_factory=list)
    epsilon_calls: int = 0

    def append(self, i: int, z: np.ndarray, y: Optional[np.ndarray] = None) -> None:
        if not np.all(np.isfinite(z)) or (y is not None and not np.all(np.isfinite(y))):
            raise FloatingPointError(f"{self.solver}: non-finite state at index {i}")
        self.indices.append(i)
        self.states.append(z)
        if y is not None:
            if self.aux is None:
                self.aux = []
            self.aux.append(y)

    def state(self, i: int) -> np.ndarray:
        return self.states[self.indices.index(i)]

    def y(self, i: int) -> np.ndarray:
        if self.aux is None:
            raise KeyError(f"{self.solver} trace has no auxiliary sequence")
        return self.aux[self.indices.index(i)]

    def record(self, name: str, i: int, value: np.ndarray) -> None:
        self.internals.setdefault(name, {})[i] = value

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def times(self) -> list[float]:
        return [self.grid.t(i) for i in self.indices]

    def to_csv(self, fh: Optional[IO[str]] = None) -> str:
        """Write the trace as CSV; returns the text when ``fh`` is None.

        A leading ``sample`` column enumerates batch rows.
        """
        out = fh if fh is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        if self.entries:
            _write_edm(self, writer)
        else:
            _write_generic(self, writer)
        return out.getvalue() if fh is None else ""


def _rows(a: np.ndarray) -> np.ndarray:
    return np.atleast_2d(a)


def _fmt(v: float) -> str:
    return repr(float(v))


def _vec(a: Optional[np.ndarray], b: int, d: int) -> list[str]:
    if a is None:
        return [""] * d
    return [_fmt(v) for v in _rows(a)[b]]


def _write_generic(tr: SolverTrace, writer) -> None:
    z0 = _rows(tr.states[0])
    n, d = z0.shape
    header = ["sample", "index", "time"] + [f"z{k}" for k in range(d)]
    if tr.aux is not None:
        header += [f"y{k}" for k in range(d)]
    header += [f"delta_fwd{k}" for k in range(d)] + [f"delta_bwd{k}" for k in range(d)]
    writer.writerow(header)
    for b in range(n):
        for pos, i in enumerate(tr.indices):
            row = [str(b), str(i), _fmt(tr.grid.t(i))] + _vec(tr.states[pos], b, d)
            if tr.aux is not None:
                row += _vec(tr.aux[pos], b, d)
            row += _vec(tr.deltas_fwd.get(i), b, d) + _vec(tr.deltas_bwd.get(i), b, d)
            writer.writerow(row)


def _write_edm(tr: SolverTrace, writer) -> None:
    z0 = _rows(tr.states[0])
    n, d = z0.shape
    cols = ("z", "z_hat", "z_tilde", "d", "d_prime")
    writer.writerow(["sample", "index", "t"] + [f"{c}{k}" for c in cols for k in range(d)])
    by_index = {e.index: e for e in tr.entries}
    for b in range(n):
        for pos, i in enumerate(tr.indices):
            e = by_index.get(i)
            row = [str(b), str(i), _fmt(tr.grid.t(i))] + _vec(tr.states[pos], b, d)
            for name in cols[1:]:
                row += _vec(getattr(e, name) if e is not None else None, b, d)
            writer.writerow(row)
