"""Grid mazes with one-way walls, no-revisit moves and coloured reward squares.

Layout text, one row per line::

    #  wall            .  empty          A  start
    Y  one-way yellow (enter moving down or right)
    R  one-way red    (enter moving up or left)
    g r o b  reward squares (green, red, orange, blue)
    ?  chance cell: any action taken there becomes a uniformly random move

Lines starting with ``;`` are comments.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .mdp import Policy

COLORS = {"g": "green", "r": "red", "o": "orange", "b": "blue"}
PASSABLE = set(".AYR?") | set(COLORS)
VALID = PASSABLE | {"#"}
BUILTIN_NAMES = ("maze-exclusive", "maze-identical", "maze-multireward", "maze-constraint")


class LayoutError(ValueError):
    pass


class Direction(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


DELTAS = {Direction.UP: (-1, 0), Direction.DOWN: (1, 0), Direction.LEFT: (0, -1), Direction.RIGHT: (0, 1)}
# one-way cells: the directions of travel allowed when entering them
ONE_WAY = {"Y": (Direction.DOWN, Direction.RIGHT), "R": (Direction.UP, Direction.LEFT)}


class StateKeying(enum.Enum):
    POSITION_ONLY = "position"
    POSITION_AND_VISITED = "visited"
    POSITION_AND_COLLECTED = "collected"


@dataclass(frozen=True)
class MazeLayout:
    rows: tuple[str, ...]

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def start(self) -> tuple[int, int]:
        for r, row in enumerate(self.rows):
            c = row.find("A")
            if c >= 0:
                return (r, c)
        raise LayoutError("no start cell")

    def cell(self, pos: tuple[int, int]) -> str:
        return self.rows[pos[0]][pos[1]]

    def reward_squares(self) -> dict[tuple[int, int], str]:
        return {
            (r, c): COLORS[ch]
            for r, row in enumerate(self.rows)
            for c, ch in enumerate(row)
            if ch in COLORS
        }

    def serialize(self) -> str:
        return "\n".join(self.rows) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def parse_layout(text: str) -> MazeLayout:
    rows = []
    width = None
    starts = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith(";"):
            continue
        line = line.rstrip("\r")
        if width is None:
            width = len(line)
        elif len(line) != width:
            raise LayoutError(f"line {lineno}: ragged row of width {len(line)}, expected {width}")
        for col, ch in enumerate(line, start=1):
            if ch not in VALID:
                raise LayoutError(f"line {lineno}, column {col}: unknown cell {ch!r}")
            starts += ch == "A"
        rows.append(line)
    if not rows:
        raise LayoutError("empty layout")
    if starts != 1:
        raise LayoutError(f"layout needs exactly one start 'A', found {starts}")
    return MazeLayout(tuple(rows))


@dataclass(frozen=True)
class MazeConfig:
    n_sources: int
    # colour -> (source index, low, high) of the uniform reward
    reward_spec: dict[str, tuple[int, float, float]]
    gamma: float = 0.99
    max_steps: int = 400
    keying: StateKeying = StateKeying.POSITION_AND_VISITED

    def __post_init__(self):
        for color, (src, lo, hi) in self.reward_spec.items():
            if not 0 <= src < self.n_sources:
                raise ValueError(f"{color}: source index {src} out of range")
            if lo > hi:
                raise ValueError(f"{color}: empty reward range [{lo}, {hi}]")


@dataclass(frozen=True)
class MazeState:
    position: tuple[int, int]
    visited: frozenset
    collected: frozenset = frozenset()
    step_count: int = 0


def initial_state(layout: MazeLayout) -> MazeState:
    start = layout.start
    return MazeState(start, frozenset([start]))


def _blocked(layout: MazeLayout, state: MazeState, action: int) -> bool:
    dr, dc = DELTAS[Direction(action)]
    r, c = state.position[0] + dr, state.position[1] + dc
    if not (0 <= r < layout.height and 0 <= c < layout.width):
        return True
    ch = layout.rows[r][c]
    if ch == "#":
        return True
    if ch in ONE_WAY and action not in ONE_WAY[ch]:
        return True
    return (r, c) in state.visited


def is_stuck(layout: MazeLayout, state: MazeState) -> bool:
    return all(_blocked(layout, state, a) for a in Direction)


def open_moves(layout: MazeLayout, state: MazeState) -> list[int]:
    return [int(a) for a in Direction if not _blocked(layout, state, a)]


def maze_step(
    state: MazeState,
    action: int,
    layout: MazeLayout,
    config: MazeConfig,
    rng: np.random.Generator,
) -> tuple[MazeState, np.ndarray, bool]:
    """One attempted move. Blocked moves still consume a step."""
    reward = np.zeros(config.n_sources)
    if layout.cell(state.position) == "?":
        # a chance cell overrides the chosen move with a uniformly random open one
        moves = open_moves(layout, state)
        if moves:
            action = moves[int(rng.integers(len(moves)))]
    if _blocked(layout, state, action):
        nxt = MazeState(state.position, state.visited, state.collected, state.step_count + 1)
    else:
        dr, dc = DELTAS[Direction(action)]
        pos = (state.position[0] + dr, state.position[1] + dc)
        collected = state.collected
        ch = layout.cell(pos)
        if ch in COLORS and pos not in collected:
            src, lo, hi = config.reward_spec[COLORS[ch]]
            reward[src] = rng.uniform(lo, hi)
            collected = collected | {pos}
        nxt = MazeState(pos, state.visited | {pos}, collected, state.step_count + 1)
    terminal = nxt.step_count >= config.max_steps or is_stuck(layout, nxt)
    return nxt, reward, terminal


def _mask(cells, width: int) -> int:
    m = 0
    for r, c in cells:
        m |= 1 << (r * width + c)
    return m


def state_key(state: MazeState, mode: StateKeying, width: int = 64) -> tuple:
    """Hashable key; injective within a mode for a fixed layout width."""
    r, c = state.position
    if mode is StateKeying.POSITION_ONLY:
        return (r, c)
    if mode is StateKeying.POSITION_AND_VISITED:
        return (r, c, _mask(state.visited, width))
    return (r, c, _mask(state.collected, width))


_REWARDS_TWO = {"green": (0, 0.2, 0.6), "red": (1, 0.4, 0.9)}
_BUILTIN_CONFIGS = {
    "maze-exclusive": MazeConfig(2, _REWARDS_TWO),
    "maze-identical": MazeConfig(2, _REWARDS_TWO),
    "maze-multireward": MazeConfig(
        4,
        {"orange": (0, 0.2, 0.4), "blue": (1, 0.8, 1.0), "green": (2, 0.3, 0.5), "red": (3, 0.5, 0.7)},
    ),
    # a constraint can only be met within ~50 steps at gamma 0.99, so episodes are cut at 60
    "maze-constraint": MazeConfig(
        3, {"red": (0, 1.0, 1.0), "green": (1, 1.0, 1.0), "blue": (2, 1.0, 1.0)}, max_steps=60
    ),
}


def layout_text(name: str) -> str:
    if name not in _BUILTIN_CONFIGS:
        raise KeyError(f"unknown maze {name!r}; known: {', '.join(BUILTIN_NAMES)}")
    return resources.files("md3qn.layouts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def builtin_maze(name: str) -> tuple[MazeLayout, MazeConfig]:
    return parse_layout(layout_text(name)), _BUILTIN_CONFIGS[name]


@dataclass
class MazeEnv:
    layout: MazeLayout
    config: MazeConfig
    n_actions: int = field(init=False, default=4)
    n_sources: int = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        self.n_sources = self.config.n_sources
        self.gamma = self.config.gamma
        self._open_cache: dict = {}

    @classmethod
    def builtin(cls, name: str, **overrides) -> "MazeEnv":
        layout, config = builtin_maze(name)
        if overrides:
            config = MazeConfig(**{**config.__dict__, **overrides})
        return cls(layout, config)

    def reset(self, rng: np.random.Generator | None = None) -> MazeState:
        return initial_state(self.layout)

    def step(self, state: MazeState, action: int, rng: np.random.Generator):
        return maze_step(state, action, self.layout, self.config, rng)

    def key(self, state: MazeState) -> tuple:
        return state_key(state, self.config.keying, self.layout.width)

    def state_from_key(self, key: tuple) -> MazeState:
        """Position and visited set encoded in a position-and-visited key."""
        if self.config.keying is not StateKeying.POSITION_AND_VISITED:
            raise ValueError("only position-and-visited keys determine the visited set")
        r, c, mask = key
        w = self.layout.width
        visited = frozenset((i // w, i % w) for i in range(mask.bit_length()) if mask >> i & 1)
        return MazeState((r, c), visited)

    def open_move_probs(self, key: tuple) -> np.ndarray:
        """Uniform over moves that are not blocked; uniform over all four when stuck."""
        p = self._open_cache.get(key)
        if p is None:
            moves = open_moves(self.layout, self.state_from_key(key))
            p = np.zeros(self.n_actions)
            if moves:
                p[moves] = 1.0 / len(moves)
            else:
                p[:] = 1.0 / self.n_actions
            p.setflags(write=False)
            self._open_cache[key] = p
        return p

    def open_move_policy(self) -> Policy:
        """The random walker: a uniformly random direction among those not blocked."""
        return Policy(self.n_actions, self.open_move_probs)

    def first_move(self) -> int:
        """Lowest-index action that leaves the start cell."""
        s0 = self.reset()
        for a in Direction:
            if not _blocked(self.layout, s0, a):
                return int(a)
        raise LayoutError("start cell is enclosed")
