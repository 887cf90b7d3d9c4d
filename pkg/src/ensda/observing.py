"""Point observation networks, synthetic truths, and the operator H.

H is a pure gather: each observation site is a (cell index, variable
index) pair and picks one entry of the flattened state.  Observation
noise is iid N(0, r^2).  A TwinExperiment bundles the truth snapshots at
assimilation times together with the drawn observations so that every
filter sees exactly the same data; it round-trips through a small binary
file so truths can be generated once and reused.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .gridfield import Grid2D, StateVector

logger = logging.getLogger(__name__)

_MAGIC = b"TWXP"
_VERSION = 1


@dataclass(frozen=True)
class ObservationNetwork:
    """Sites are (cell, variable) pairs; noise std r is shared by all."""

    sites: tuple[tuple[int, int], ...]
    r: float

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple((int(c), int(v)) for c, v in self.sites))
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("observation sites must be distinct")
        if len(self.sites) == 0:
            raise ValueError("need at least one observation site")
        if self.r < 0:
            raise ValueError("noise std r must be >= 0")

    @property
    def n_y(self) -> int:
        return len(self.sites)

    def flat_indices(self, grid: Grid2D, n_vars: int) -> np.ndarray:
        cells = np.array([c for c, _ in self.sites])
        variables = np.array([v for _, v in self.sites])
        if np.any(cells < 0) or np.any(cells >= grid.n_cells):
            raise ValueError("site cell index out of range")
        if np.any(variables < 0) or np.any(variables >= n_vars):
            raise ValueError("site variable index out of range")
        return variables * grid.n_cells + cells

    def log_sparsity(self, n_x: int) -> bool:
        """Flag (and log) whether this network is in the sparse regime."""
        sparse = self.n_y <= 0.1 * n_x
        logger.info(
            "observation network: N_Y=%d of N_X=%d (%s regime)",
            self.n_y,
            n_x,
            "sparse" if sparse else "dense",
        )
        return sparse


@dataclass
class ObservationRecord:
    time_index: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation values must be finite")


@dataclass
class TwinExperiment:
    """One truth realisation plus the observations drawn from it."""

    grid: Grid2D
    n_vars: int
    network: ObservationNetwork
    schedule: tuple[int, ...]
    truth_states: list[StateVector]
    observations: list[ObservationRecord]
    final_state: StateVector
    seed: int = 0

    def truth_at(self, time_index: int) -> StateVector:
        k = self.schedule.index(time_index)
        return self.truth_states[k]


def apply_H(network: ObservationNetwork, x: StateVector) -> np.ndarray:
    """y = H x: gather the observed entries."""
    return x.values[network.flat_indices(x.grid, x.n_vars)]


def observe(network: ObservationNetwork, truth: StateVector, rng, time_index: int = 0) -> ObservationRecord:
    vals = apply_H(network, truth)
    if network.r > 0:
        vals = vals + network.r * rng.standard_normal(network.n_y)
    else:
        vals = vals.copy()
    return ObservationRecord(time_index=time_index, values=vals)


def run_truth(
    step_fn,
    error_fn,
    x0: StateVector,
    schedule,
    network: ObservationNetwork,
    rng,
    seed: int = 0,
) -> TwinExperiment:
    """Advance a truth run, observing at the scheduled step indices.

    step_fn(state) -> state advances one model step; error_fn(rng) returns
    an additive StateVector draw or None (so callers control the error
    cadence).  Truth snapshots are kept only at assimilation times.
    """
    schedule = tuple(int(n) for n in schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    if schedule and schedule[0] < 1:
        raise ValueError("schedule entries are step counts >= 1")

    network.log_sparsity(x0.n)
    x = x0.copy()
    truths: list[StateVector] = []
    records: list[ObservationRecord] = []
    pending = list(schedule)
    n_steps = schedule[-1] if schedule else 0
    for n in range(1, n_steps + 1):
        try:
            x = step_fn(x)
        except RuntimeError as err:
            raise type(err)(f"truth aborted at step {n}: {err}") from err
        nu = error_fn(rng)
        if nu is not None:
            x = StateVector(x.grid, x.n_vars, x.values + nu.values)
        if pending and n == pending[0]:
            pending.pop(0)
            truths.append(x.copy())
            records.append(observe(network, x, rng, time_index=n))
    return TwinExperiment(
        grid=x0.grid,
        n_vars=x0.n_vars,
        network=network,
        schedule=schedule,
        truth_states=truths,
        observations=records,
        final_state=x,
        seed=seed,
    )


# --- serialization --------------------------------------------------------


def save_twin(path, twin: TwinExperiment) -> None:
    g = twin.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(
            struct.pack(
                "<IIddBBIQd",
                g.nx,
                g.ny,
                g.dx,
                g.dy,
                int(g.periodic_x),
                int(g.periodic_y),
                twin.n_vars,
                twin.seed & 0xFFFFFFFFFFFFFFFF,
                twin.network.r,
            )
        )
        fh.write(struct.pack("<I", twin.network.n_y))
        for c, v in twin.network.sites:
            fh.write(struct.pack("<II", c, v))
        fh.write(struct.pack("<I", len(twin.schedule)))
        for n in twin.schedule:
            fh.write(struct.pack("<q", n))
        for s in twin.truth_states:
            fh.write(s.values.astype("<f8").tobytes())
        fh.write(twin.final_state.values.astype("<f8").tobytes())
        for rec in twin.observations:
            fh.write(struct.pack("<q", rec.time_index))
            fh.write(rec.values.astype("<f8").tobytes())


def load_twin(path) -> TwinExperiment:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a twin-experiment file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        header_fmt = "<IIddBBIQd"
        nx, ny, dx, dy, px, py, n_vars, seed, r = struct.unpack(
            header_fmt, fh.read(struct.calcsize(header_fmt))
        )
        grid = Grid2D(nx, ny, dx, dy, periodic_x=bool(px), periodic_y=bool(py))
        (n_sites,) = struct.unpack("<I", fh.read(4))
        sites = tuple(struct.unpack("<II", fh.read(8)) for _ in range(n_sites))
        network = ObservationNetwork(sites=sites, r=r)
        (n_sched,) = struct.unpack("<I", fh.read(4))
        schedule = tuple(struct.unpack("<q", fh.read(8))[0] for _ in range(n_sched))
        n = n_vars * grid.n_cells
        truths = []
        for _ in range(n_sched):
            vals = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)
            truths.append(StateVector(grid, n_vars, vals))
        final = StateVector(grid, n_vars, np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float))
        records = []
        for _ in range(n_sched):
            (t,) = struct.unpack("<q", fh.read(8))
            vals = np.frombuffer(fh.read(8 * n_sites), dtype="<f8").astype(float)
            records.append(ObservationRecord(time_index=t, values=vals))
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after payload")
    return TwinExperiment(
        grid=grid,
        n_vars=n_vars,
        network=network,
        schedule=schedule,
        truth_states=truths,
        observations=records,
        final_state=final,
        seed=seed,
    )


def export_observations_csv(twin: TwinExperiment, path) -> None:
    """Flat observation table for the plotting side: time_index,site,value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_index", "site", "value"])
        for rec in twin.observations:
            for j, val in enumerate(rec.values):
                w.writerow([rec.time_index, j, repr(float(val))])
