"""Minority-Game and $-Game dynamics.

Market moves are bits (1 = up, 0 = down). A history is the last m moves
packed into an integer, newest move in the least significant bit. Each
agent owns s lookup-table strategies mapping every possible history to an
action in {-1, +1}; the agent always plays its highest-scoring strategy.
The signed sum of all played actions (the attendance) sets the next move.

Scoring is virtual: every strategy of every agent is scored each step,
whether it was played or not. Payoff timing differs by game kind:

* Minority Game: a strategy's recommendation at the current history is
  scored against the current attendance, dG = -S(mu(t)) * A(t).
* $-Game: a strategy's recommendation two steps back is scored against
  the previous attendance, dG = +S(mu(t-2)) * A(t-1), so the first two
  decisions of a game happen on untouched scores.

All scores are integers; all randomness (tie breaks, zero-attendance
coin flips, strategy assignment, initial history) flows from the game
seed through per-agent substreams, so trajectories replay exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class GameKind(str, enum.Enum):
    MINORITY = "mg"
    DOLLAR = "dollar"


class InvalidInput(ValueError):
    """Raised when an operation's preconditions are violated."""


# ---------------------------------------------------------------------------
# histories

@dataclass(frozen=True)
class History:
    """The last m market moves, packed so the newest move is the LSB."""

    m: int
    mu: int

    def __post_init__(self):
        if not 1 <= self.m <= 16:
            raise InvalidInput(f"history length m={self.m} outside [1, 16]")
        if not 0 <= self.mu < (1 << self.m):
            raise InvalidInput(f"mu={self.mu} outside [0, 2^{self.m})")

    def bits(self) -> str:
        """Render as a bit string, oldest move leftmost, newest rightmost."""
        return format(self.mu, f"0{self.m}b")

    def shift(self, b: int) -> "History":
        return successor(self, b)


def encode_history(bits, m: int | None = None) -> History:
    """Pack an oldest-first sequence of moves (or a '01' string) into a History."""
    seq = [int(c) for c in bits]
    if m is not None and len(seq) != m:
        raise InvalidInput(f"expected {m} moves, got {len(seq)}")
    if any(b not in (0, 1) for b in seq):
        raise InvalidInput("moves must be 0 or 1")
    mu = 0
    for b in seq:
        mu = (mu << 1) | b
    return History(len(seq), mu)


def successor(h: History, b: int) -> History:
    """Drop the oldest move, append b as the newest."""
    if b not in (0, 1):
        raise InvalidInput(f"move must be 0 or 1, got {b}")
    return History(h.m, successor_index(h.mu, b, h.m))


def successor_index(mu: int, b: int, m: int) -> int:
    # bare-int variant for hot loops
    return ((mu << 1) & ((1 << m) - 1)) | b


def all_histories(m: int):
    return (History(m, mu) for mu in range(1 << m))


# ---------------------------------------------------------------------------
# strategies and agents

@dataclass(frozen=True)
class Strategy:
    """Lookup table: action in {-1, +1} for each of the 2^m histories."""

    actions: np.ndarray  # shape (2^m,), int8, entries +-1

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=np.int8)
        n = a.shape[0]
        if n == 0 or n & (n - 1):
            raise InvalidInput(f"strategy table length {n} is not a power of two")
        if not np.all(np.abs(a) == 1):
            raise InvalidInput("strategy entries must be +1 or -1")
        object.__setattr__(self, "actions", a)

    @property
    def m(self) -> int:
        return int(self.actions.shape[0]).bit_length() - 1

    def action(self, h: History) -> int:
        return int(self.actions[h.mu])

    def is_constant(self) -> bool:
        return bool(np.all(self.actions == self.actions[0]))


def all_strategies(m: int):
    """Enumerate all 2^(2^m) strategy tables (test sizes only)."""
    n = 1 << m
    for code in range(1 << n):
        bits = (code >> np.arange(n)) & 1
        yield Strategy((bits * 2 - 1).astype(np.int8))


def draw_strategy_tables(rng: np.random.Generator, n_agents: int, s: int, m: int) -> np.ndarray:
    """Sample (n_agents, s, 2^m) tables uniformly, with replacement."""
    return (rng.integers(0, 2, size=(n_agents, s, 1 << m), dtype=np.int8) * 2 - 1).astype(np.int8)


@dataclass
class Agent:
    """s strategies with their running integer payoff scores."""

    tables: np.ndarray  # (s, 2^m) int8
    scores: np.ndarray  # (s,) int64
    rng: np.random.Generator  # tie-break stream, consumed only on ties

    @property
    def s(self) -> int:
        return int(self.tables.shape[0])

    @property
    def strategies(self) -> list[Strategy]:
        return [Strategy(self.tables[j]) for j in range(self.s)]


def best_strategy(agent: Agent, rng: np.random.Generator | None = None) -> int:
    """Index of a maximal-score strategy; ties broken uniformly at random.

    The draw comes from the agent's own stream (or ``rng`` if given) and is
    consumed only when a tie actually exists.
    """
    scores = agent.scores
    if scores.shape[0] == 1:
        return 0
    mx = scores.max()
    cands = np.flatnonzero(scores == mx)
    if cands.shape[0] == 1:
        return int(cands[0])
    r = rng if rng is not None else agent.rng
    return int(cands[int(r.integers(0, cands.shape[0]))])


# ---------------------------------------------------------------------------
# games

@dataclass
class Game:
    """N agents, current history, and the pending state the $G payoff lag needs."""

    kind: GameKind
    m: int
    agents: list[Agent]
    seed: int
    rng: np.random.Generator  # game-level stream: initial history, A=0 coin
    history: History
    prev_history: History | None = None
    last_attendance: int | None = None
    time: int = 0  # completed self-play steps
    tie_steps: int = 0  # steps on which some agent had a score tie
    _s: int = field(default=0, repr=False)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def s(self) -> int:
        return self._s


def new_game(kind: GameKind | str, n_agents: int, m: int, s: int, seed: int) -> Game:
    """Create a game with fresh uniform strategies and zero scores."""
    kind = GameKind(kind)
    if n_agents < 1:
        raise InvalidInput(f"need at least one agent, got {n_agents}")
    if s < 1:
        raise InvalidInput(f"need at least one strategy per agent, got {s}")
    streams = np.random.SeedSequence(seed).spawn(n_agents + 1)
    game_rng = np.random.default_rng(streams[0])
    tables = draw_strategy_tables(game_rng, n_agents, s, m)
    agents = [
        Agent(tables=tables[i], scores=np.zeros(s, dtype=np.int64), rng=np.random.default_rng(streams[i + 1]))
        for i in range(n_agents)
    ]
    h0 = History(m, int(game_rng.integers(0, 1 << m)))
    g = Game(kind=kind, m=m, agents=agents, seed=seed, rng=game_rng, history=h0)
    g._s = s
    return g


def attendance(game: Game, h: History | None = None) -> int:
    """Signed sum of every agent's best-strategy action at h.

    Consumes per-agent tie-break draws where score ties exist.
    """
    h = game.history if h is None else h
    total = 0
    tie = False
    for ag in game.agents:
        mx = ag.scores.max()
        cands = np.flatnonzero(ag.scores == mx)
        if cands.shape[0] > 1:
            tie = True
            j = int(cands[int(ag.rng.integers(0, cands.shape[0]))])
        else:
            j = int(cands[0])
        total += int(ag.tables[j, h.mu])
    if tie:
        game.tie_steps += 1
    return total


def attendance_via_q(game: Game, h: History | None = None) -> int:
    """Attendance for s=2 games computed from relative payoffs q = G2 - G1.

    Theta(q) picks strategy 2 when q > 0, strategy 1 otherwise; on non-tie
    steps this equals attendance(). Ties (q = 0) fall to strategy 1, so the
    two routes may legitimately differ there.
    """
    h = game.history if h is None else h
    total = 0
    for ag in game.agents:
        if ag.s != 2:
            raise InvalidInput("attendance_via_q requires exactly two strategies per agent")
        q = int(ag.scores[1]) - int(ag.scores[0])
        total += int(ag.tables[1 if q > 0 else 0, h.mu])
    return total


def relative_payoffs(game: Game) -> np.ndarray:
    """q_i = G(S2) - G(S1) per agent (s=2 only)."""
    if any(ag.s != 2 for ag in game.agents):
        raise InvalidInput("relative payoffs are defined for s=2 games")
    return np.array([int(ag.scores[1]) - int(ag.scores[0]) for ag in game.agents], dtype=np.int64)


def any_score_ties(game: Game) -> bool:
    return any(np.count_nonzero(ag.scores == ag.scores.max()) > 1 for ag in game.agents)


def update_payoffs_mg(game: Game, h_prev: History, a_prev: int) -> None:
    """Score all strategies against the step just played: dG = -S(h_prev) * a_prev."""
    for ag in game.agents:
        ag.scores -= ag.tables[:, h_prev.mu].astype(np.int64) * a_prev


def update_payoffs_dollar(game: Game, h_two_back: History, a_prev: int) -> None:
    """$G lagged scoring: dG = +S(h_two_back) * a_prev.

    h_two_back is the history two steps before the *next* decision; callers
    must skip the update while the lag is unpopulated (first game step).
    """
    for ag in game.agents:
        ag.scores += ag.tables[:, h_two_back.mu].astype(np.int64) * a_prev


def step_selfplay(game: Game, h: History | None = None) -> tuple[int, int]:
    """Advance one self-play step from h (default: the game's own history).

    Computes the attendance, derives the next move (A > 0 -> 1, A < 0 -> 0,
    A = 0 -> fair coin from the game stream), applies the kind-appropriate
    payoff update, and rolls the history forward. Returns (move, attendance).
    """
    h = game.history if h is None else h
    a = attendance(game, h)
    if a > 0:
        b = 1
    elif a < 0:
        b = 0
    else:
        b = int(game.rng.integers(0, 2))
    if game.kind is GameKind.MINORITY:
        update_payoffs_mg(game, h, a)
    else:
        if game.prev_history is not None:
            update_payoffs_dollar(game, game.prev_history, a)
    game.prev_history = h
    game.history = successor(h, b)
    game.last_attendance = a
    game.time += 1
    return b, a


def selfplay_bits(game: Game, n_steps: int) -> np.ndarray:
    """Run n_steps of self-play, returning the generated move sequence."""
    out = np.empty(n_steps, dtype=np.uint8)
    for i in range(n_steps):
        out[i], _ = step_selfplay(game)
    return out
