"""Coupled/decoupled classification of strategies, agents, and whole games.

A strategy is one-step decoupled at history h when it recommends the same
action after both possible next moves; its recommendation two steps out is
then already forced. An agent is decoupled when the action of its *best*
strategy two steps out is forced, which additionally requires looking at
how the hypothetical next move would shift the scores (a payoff swing can
switch which strategy is best). Summing the forced actions of decoupled
agents gives a_decoupled: when |a_decoupled| > N/2 the sign of the move
two steps ahead is certain, because the remaining agents cannot outvote it.

Branch score updates use unit-magnitude increments (the external-stream
scoring rule): only the sign of the hypothetical move is knowable ahead of
time. Agents whose branch verdict hinges on how a score tie resolves are
conservatively classified coupled. All functions here are pure: they never
touch game state or consume RNG draws.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .core import Agent, Game, GameKind, History, InvalidInput, Strategy, successor


class Direction(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NONE = "none"


@dataclass(frozen=True)
class DecoupledVerdict:
    decoupled: bool
    forced_action: int | None = None  # +-1, present iff decoupled

    def __post_init__(self):
        if self.decoupled != (self.forced_action is not None):
            raise InvalidInput("forced_action must be present iff decoupled")


@dataclass(frozen=True)
class GameDecoupling:
    a_decoupled: int  # sum of forced actions of decoupled agents
    n_decoupled: int
    direction: Direction


@dataclass(frozen=True)
class ScoringContext:
    """What the branch payoff update needs beyond the current history.

    For the $-Game the update keys on the history one step back; pass
    h_prev=None while that lag is still unpopulated and the branch update
    is skipped (both branches then differ only in their history).
    """

    kind: GameKind
    h_prev: History | None = None


def strategy_decoupled(strategy: Strategy, h: History, k: int = 1) -> DecoupledVerdict:
    """Is the strategy's action k steps out the same along all 2^k branches?"""
    if k < 1:
        raise InvalidInput(f"lookahead depth must be >= 1, got {k}")
    forced = None
    for moves in itertools.product((0, 1), repeat=k):
        hk = h
        for b in moves:
            hk = successor(hk, b)
        a = strategy.action(hk)
        if forced is None:
            forced = a
        elif a != forced:
            return DecoupledVerdict(False)
    return DecoupledVerdict(True, forced)


def _branch_scores(agent: Agent, h_t: History, ctx: ScoringContext, e: int) -> np.ndarray:
    # one hypothetical step of virtual scoring at unit magnitude
    if ctx.kind is GameKind.MINORITY:
        return agent.scores - agent.tables[:, h_t.mu].astype(np.int64) * e
    if ctx.h_prev is None:
        return agent.scores
    return agent.scores + agent.tables[:, ctx.h_prev.mu].astype(np.int64) * e


def agent_decoupled(
    game: Game,
    i: int,
    h_t: History,
    ctx: ScoringContext,
    candidates: str = "best",
) -> DecoupledVerdict:
    """Two-branch lookahead for agent i at history h_t.

    For each hypothetical next move the agent's scores get the branch
    payoff update, its best strategy under those scores is read at the
    branch history, and the agent is decoupled iff both actions agree
    unambiguously. candidates="all" treats every strategy as playable
    (the uniform-random-play variant): forced only on unanimity.
    """
    if candidates not in ("best", "all"):
        raise InvalidInput(f"unknown candidate rule {candidates!r}")
    agent = game.agents[i]
    actions = []
    for b in (0, 1):
        mu2 = successor(h_t, b).mu
        entries = agent.tables[:, mu2]
        if candidates == "best":
            branch = _branch_scores(agent, h_t, ctx, 2 * b - 1)
            entries = entries[branch == branch.max()]
        lo, hi = int(entries.min()), int(entries.max())
        if lo != hi:  # an action-changing tie: conservatively coupled
            return DecoupledVerdict(False)
        actions.append(lo)
    if actions[0] == actions[1]:
        return DecoupledVerdict(True, actions[0])
    return DecoupledVerdict(False)


def game_decoupling(
    game: Game,
    h_t: History,
    ctx: ScoringContext,
    sharper_bound: bool = False,
    candidates: str = "best",
) -> GameDecoupling:
    """Aggregate agent verdicts and apply the certain-predictability rule.

    Default rule: |a_decoupled| > N/2 (strict). sharper_bound=True uses
    |a_decoupled| > N - n_decoupled instead, which is tight but is not the
    published condition.
    """
    a_dec = 0
    n_dec = 0
    for i in range(game.n_agents):
        v = agent_decoupled(game, i, h_t, ctx, candidates=candidates)
        if v.decoupled:
            a_dec += v.forced_action
            n_dec += 1
    limit = (game.n_agents - n_dec) if sharper_bound else (game.n_agents / 2)
    if a_dec > limit:
        direction = Direction.POSITIVE
    elif -a_dec > limit:
        direction = Direction.NEGATIVE
    else:
        direction = Direction.NONE
    return GameDecoupling(a_decoupled=a_dec, n_decoupled=n_dec, direction=direction)


def brute_force_sign_determined(game: Game, h_t: History, ctx: ScoringContext) -> Direction:
    """Independent oracle: is sign(A(t+2)) the same on both next-move branches?

    Exhaustive over everything the prediction cannot know: both hypothetical
    next moves and, within each branch, every way agents' score ties could
    resolve. Each agent contributes an interval [min action, max action]
    over its tied best strategies; the branch sign is determined only when
    the whole attendance interval lies strictly on one side of zero. Small
    instances only (cost is linear in N*s but called per state).
    """
    branch_signs = []
    for b in (0, 1):
        e = 2 * b - 1
        mu2 = successor(h_t, b).mu
        lo_total = 0
        hi_total = 0
        for agent in game.agents:
            if ctx.kind is GameKind.MINORITY:
                scores = agent.scores - agent.tables[:, h_t.mu].astype(np.int64) * e
            elif ctx.h_prev is not None:
                scores = agent.scores + agent.tables[:, ctx.h_prev.mu].astype(np.int64) * e
            else:
                scores = agent.scores
            acts = agent.tables[:, mu2][scores == scores.max()]
            lo_total += int(acts.min())
            hi_total += int(acts.max())
        if lo_total > 0:
            branch_signs.append(1)
        elif hi_total < 0:
            branch_signs.append(-1)
        else:
            branch_signs.append(0)
    if branch_signs[0] == branch_signs[1] == 1:
        return Direction.POSITIVE
    if branch_signs[0] == branch_signs[1] == -1:
        return Direction.NEGATIVE
    return Direction.NONE
