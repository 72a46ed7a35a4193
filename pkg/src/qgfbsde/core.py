"""Time grids, path storage and the seeding contract shared by every module."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

# Paths are drawn in fixed-size blocks; each block owns its own counter-based
# stream, so the draws for a path never depend on how blocks are scheduled.
BLOCK_SIZE = 4096


class ConfigError(ValueError):
    """Invalid model, payoff, grid or run configuration."""


class SimulationError(RuntimeError):
    """Forward simulation produced non-finite values."""


class NumericalError(RuntimeError):
    """Singular regression or non-finite backward values."""


class DomainError(ValueError):
    """Argument outside the domain of a transform or driver."""


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant partition of ``[0, horizon]`` into ``steps`` intervals."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError(f"horizon must be positive, got {self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError(f"steps must be a positive integer, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        # T*(i/N), never accumulated; the last node is exactly T
        return self.horizon * (np.arange(self.steps + 1) / self.steps)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * int(factor))

    def refines(self, coarse: "TimeGrid") -> bool:
        """True if every node of ``coarse`` is a node of this grid."""
        return self.horizon == coarse.horizon and self.steps % coarse.steps == 0


def build_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(T, N)


@dataclass(frozen=True)
class SeedSpec:
    master: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master) < 2**64:
            raise ConfigError(f"master seed must fit in 64 bits, got {self.master!r}")
        if int(self.stream) < 0:
            raise ConfigError(f"stream id must be nonnegative, got {self.stream!r}")

    def child(self, stream: int) -> "SeedSpec":
        return SeedSpec(self.master, stream)

    def block_generator(self, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master), spawn_key=(int(self.stream), int(block)))
        return np.random.Generator(np.random.Philox(ss))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PathBatch:
    """Simulated forward states on a grid together with the driving increments.

    ``states`` is ``M x (N+1)``; ``dW1`` and ``dW2`` are ``M x N`` and already
    scaled by ``sqrt(h)``.
    """

    grid: TimeGrid
    states: np.ndarray
    dW1: np.ndarray
    dW2: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        M, n1 = np.shape(self.states)
        if n1 != self.grid.steps + 1:
            raise ConfigError(f"states have {n1} columns, grid has {self.grid.steps + 1} nodes")
        for name in ("dW1", "dW2"):
            if np.shape(getattr(self, name)) != (M, self.grid.steps):
                raise ConfigError(f"{name} has shape {np.shape(getattr(self, name))}, expected {(M, self.grid.steps)}")
        for name in ("states", "dW1", "dW2"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    def with_states(self, states: np.ndarray, **meta) -> "PathBatch":
        return PathBatch(self.grid, states, self.dW1, self.dW2, {**self.meta, **meta})


def _blocks(M: int) -> list[tuple[int, int, int]]:
    return [(b, lo, min(lo + BLOCK_SIZE, M)) for b, lo in enumerate(range(0, M, BLOCK_SIZE))]


def draw_increments(grid: TimeGrid, M: int, seed: SeedSpec, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Two independent ``M x N`` matrices of N(0, h) Brownian increments.

    Output is a pure function of ``(grid, M, seed)``; ``workers`` only changes
    how the path blocks are scheduled.
    """
    if int(M) != M or M < 1:
        raise ConfigError(f"number of paths must be a positive integer, got {M!r}")
    M = int(M)
    N = grid.steps
    dW1 = np.empty((M, N))
    dW2 = np.empty((M, N))
    sqh = np.sqrt(grid.h)

    def fill(block):
        b, lo, hi = block
        z = seed.block_generator(b).standard_normal((2, BLOCK_SIZE, N))
        dW1[lo:hi] = z[0, : hi - lo] * sqh
        dW2[lo:hi] = z[1, : hi - lo] * sqh

    blocks = _blocks(M)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    else:
        for blk in blocks:
            fill(blk)
    return dW1, dW2
