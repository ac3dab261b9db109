"""Monte-Carlo ensembles of games driven by an external bit stream.

N_MC independently seeded games read their histories from the same stream
(human-generated or synthetic) instead of from their own attendance, score
their strategies against the stream's realized unit moves, and get
classified coupled/decoupled at every step. The per-step fractions of
positively and negatively decoupled games are the decoupling curves the
bubble detector consumes.

The engine keeps games in contiguous numpy blocks and advances all of them
per stream step; game g of an ensemble is seeded base_seed + g and is
bit-identical to running that one game on its own. Curve merging is pure
integer counting, so results do not depend on block layout or thread
schedule. An incremental ``EnsembleRunner`` exposes the same computation
one observed move at a time for live use.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    GameKind,
    History,
    InvalidInput,
    draw_strategy_tables,
    new_game,
    selfplay_bits,
    successor_index,
)

STREAM_HEADER = "bubblescope-stream v1"

# analysis at time t needs the stream's move at t+1 to exist, so the last
# analyzable step of a T-move stream is t = T - 2
ANALYSIS_END_MARGIN = 2


# ---------------------------------------------------------------------------
# external streams

@dataclass
class ExternalStream:
    """An ordered move sequence plus provenance metadata."""

    bits: np.ndarray  # uint8, entries 0/1
    source: str = "unknown"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or (b.size and not np.all(b <= 1)):
            raise InvalidInput("stream bits must be a flat 0/1 sequence")
        self.bits = b

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    def unit_moves(self) -> np.ndarray:
        """The +-1 increments 2b - 1."""
        return self.bits.astype(np.int8) * 2 - 1

    def as_text(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def write_stream(stream: ExternalStream, path, manifest: dict | None = None) -> None:
    """Write the text stream format: '#' header lines, then 0/1 characters."""
    lines = [f"# {STREAM_HEADER}", f"# source: {stream.source}"]
    if manifest is not None:
        lines.append("# manifest: " + json.dumps(manifest, sort_keys=True))
    text = stream.as_text()
    lines.extend(text[i : i + 64] for i in range(0, len(text), 64))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_stream(path) -> ExternalStream:
    source = "unknown"
    meta: dict = {}
    bits = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("source:"):
                source = body.split(":", 1)[1].strip()
            elif body.startswith("manifest:"):
                meta["manifest"] = json.loads(body.split(":", 1)[1])
            continue
        for ch in line:
            if ch in "01":
                bits.append(1 if ch == "1" else 0)
            elif not ch.isspace():
                raise InvalidInput(f"{path}: unexpected character {ch!r} in stream body")
    return ExternalStream(np.array(bits, dtype=np.uint8), source=source, meta=meta)


# ---------------------------------------------------------------------------
# configuration and curves

@dataclass(frozen=True)
class EnsembleConfig:
    n_mc: int = 1000
    n_agents: int = 11
    m: int = 3
    s: int = 20
    kind: GameKind = GameKind.DOLLAR
    base_seed: int = 0

    def __post_init__(self):
        if self.n_mc < 1:
            raise InvalidInput(f"n_mc must be >= 1, got {self.n_mc}")
        object.__setattr__(self, "kind", GameKind(self.kind))


@dataclass
class DecouplingCurves:
    """Per-step decoupled-game fractions, kept as exact counts."""

    t_start: int
    pos_counts: np.ndarray  # int64
    neg_counts: np.ndarray
    n_mc: int

    def __len__(self) -> int:
        return int(self.pos_counts.shape[0])

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t_start, self.t_start + len(self))

    @property
    def pct_pos(self) -> np.ndarray:
        return self.pos_counts / self.n_mc

    @property
    def pct_neg(self) -> np.ndarray:
        return self.neg_counts / self.n_mc

    def rows(self):
        for i, t in enumerate(self.times):
            yield int(t), float(self.pos_counts[i] / self.n_mc), float(self.neg_counts[i] / self.n_mc)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("t,pct_pos,pct_neg\n")
            for t, pp, pn in self.rows():
                f.write(f"{t},{pp:.6f},{pn:.6f}\n")


def read_curves_csv(path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "t,pct_pos,pct_neg":
            raise InvalidInput(f"{path}: unexpected curves header {header!r}")
        for line in f:
            t, pp, pn = line.strip().split(",")
            rows.append((int(t), float(pp), float(pn)))
    return rows


# ---------------------------------------------------------------------------
# the vectorized ensemble engine

_BLOCK_BYTES_BUDGET = 32 * 1024 * 1024


def _game_tables(seed: int, n_agents: int, s: int, m: int) -> np.ndarray:
    # identical derivation to core.new_game: tables come from the first
    # child stream of the game seed, before any other draw
    streams = np.random.SeedSequence(seed).spawn(1)
    return draw_strategy_tables(np.random.default_rng(streams[0]), n_agents, s, m)


class _Block:
    """A contiguous batch of games: tables (G,N,s,2^m), scores (G,N,s)."""

    def __init__(self, seeds: list[int], n_agents: int, s: int, m: int):
        self.tables = np.stack([_game_tables(sd, n_agents, s, m) for sd in seeds])
        self.scores = np.zeros((len(seeds), n_agents, s), dtype=np.int64)
        self.rng = np.random.default_rng(np.random.SeedSequence([min(seeds), 0xB10C]))

    def branch_verdicts(self, mu: int, prev_mu: int | None, m: int, kind: GameKind,
                        candidates: str, own_delta: np.ndarray | None):
        """Per-game (a_decoupled, n_decoupled) under the two-branch lookahead."""
        per_branch = []
        for b in (0, 1):
            e = 2 * b - 1
            if candidates == "all":
                branch = None
            elif own_delta is not None:
                branch = self.scores + own_delta
            elif kind is GameKind.MINORITY:
                branch = self.scores - self.tables[..., mu] * e
            elif prev_mu is not None:
                branch = self.scores + self.tables[..., prev_mu] * e
            else:
                branch = self.scores
            acts = self.tables[..., successor_index(mu, b, m)]
            if branch is None:
                cand = np.ones(acts.shape, dtype=bool)
            else:
                cand = branch == branch.max(axis=2, keepdims=True)
            plus = (cand & (acts == 1)).any(axis=2)
            minus = (cand & (acts == -1)).any(axis=2)
            unambiguous = plus ^ minus
            per_branch.append((unambiguous, np.where(plus, 1, -1)))
        (ok0, act0), (ok1, act1) = per_branch
        decoupled = ok0 & ok1 & (act0 == act1)
        a_dec = np.where(decoupled, act0, 0).sum(axis=1)
        n_dec = decoupled.sum(axis=1)
        return a_dec, n_dec

    def own_attendance(self, mu: int) -> np.ndarray:
        """Each game's own attendance at mu, ties drawn from the block stream."""
        cand = self.scores == self.scores.max(axis=2, keepdims=True)
        weight = np.where(cand, 1.0 + self.rng.random(self.scores.shape), 0.0)
        pick = weight.argmax(axis=2)
        a = np.take_along_axis(self.tables[..., mu], pick[..., None], axis=2)[..., 0]
        return a.sum(axis=1, dtype=np.int64)

    def update(self, mu: int, prev_mu: int | None, kind: GameKind, increment) -> None:
        """Realized virtual scoring; increment is a scalar or per-game array."""
        inc = increment if np.isscalar(increment) else np.asarray(increment)[:, None, None]
        if kind is GameKind.MINORITY:
            self.scores -= self.tables[..., mu] * inc
        elif prev_mu is not None:
            self.scores += self.tables[..., prev_mu] * inc


class EnsembleRunner:
    """Feed moves one at a time; ask for the decoupling tallies at any step.

    ``observe`` consumes the next realized move and applies the realized
    score updates; ``analyze`` evaluates the two-branch lookahead at the
    current time (t = moves observed so far, valid once t >= m) without
    touching state. score_source="own" replaces the stream's unit move
    with each game's own attendance in the payoff updates (sensitivity
    variant; tie-breaks then come from one per-block stream).
    """

    def __init__(self, cfg: EnsembleConfig, *, candidates: str = "best",
                 score_source: str = "stream", sharper_bound: bool = False,
                 threads: int = 1):
        if candidates not in ("best", "all"):
            raise InvalidInput(f"unknown candidate rule {candidates!r}")
        if score_source not in ("stream", "own"):
            raise InvalidInput(f"unknown score source {score_source!r}")
        self.cfg = cfg
        self.candidates = candidates
        self.score_source = score_source
        self.sharper_bound = sharper_bound
        self.threads = max(1, threads)
        per_game = cfg.n_agents * cfg.s * (1 << cfg.m)
        block_size = max(1, min(512, _BLOCK_BYTES_BUDGET // max(1, per_game)))
        seeds = [cfg.base_seed + g for g in range(cfg.n_mc)]
        self.blocks = [
            _Block(seeds[i : i + block_size], cfg.n_agents, cfg.s, cfg.m)
            for i in range(0, cfg.n_mc, block_size)
        ]
        self.t = 0
        self._warmup: list[int] = []
        self._mu: int | None = None
        self._prev_mu: int | None = None
        self._own_cache: tuple[int, list[np.ndarray]] | None = None
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _map(self, fn, *iterables):
        if self._pool is not None:
            return list(self._pool.map(fn, *iterables))
        return [fn(*args) for args in zip(*iterables)]

    def _own_attendances(self) -> list[np.ndarray]:
        # one tie-draw batch per step however often analyze() is called
        if self._own_cache is None or self._own_cache[0] != self.t:
            values = self._map(lambda blk: blk.own_attendance(self._mu), self.blocks)
            self._own_cache = (self.t, values)
        return self._own_cache[1]

    def _own_deltas(self) -> list[np.ndarray | None]:
        # the next-step payoff increment is branch-independent in own mode
        deltas: list[np.ndarray | None] = []
        for blk, a_own in zip(self.blocks, self._own_attendances()):
            inc = a_own[:, None, None]
            if self.cfg.kind is GameKind.MINORITY:
                deltas.append(-blk.tables[..., self._mu] * inc)
            elif self._prev_mu is not None:
                deltas.append(blk.tables[..., self._prev_mu] * inc)
            else:
                deltas.append(np.zeros_like(blk.scores))
        return deltas

    def analyze(self) -> tuple[int, int]:
        """(positively, negatively) decoupled game counts at the current t."""
        if self.t < self.cfg.m:
            raise InvalidInput(f"need {self.cfg.m} observed moves before analysis, have {self.t}")
        own = self._own_deltas() if self.score_source == "own" else [None] * len(self.blocks)

        def job(blk, own_delta):
            a_dec, n_dec = blk.branch_verdicts(
                self._mu, self._prev_mu, self.cfg.m, self.cfg.kind, self.candidates, own_delta
            )
            if self.sharper_bound:
                limit = self.cfg.n_agents - n_dec
                pos = a_dec > limit
                neg = -a_dec > limit
            else:
                pos = 2 * a_dec > self.cfg.n_agents
                neg = -2 * a_dec > self.cfg.n_agents
            return int(pos.sum()), int(neg.sum())

        tallies = self._map(job, self.blocks, own)
        return sum(p for p, _ in tallies), sum(n for _, n in tallies)

    def observe(self, bit: int) -> None:
        """Consume the next realized move and apply the realized scoring."""
        if bit not in (0, 1):
            raise InvalidInput(f"move must be 0 or 1, got {bit}")
        if self._mu is None:
            self._warmup.append(bit)
            self.t += 1
            if self.t == self.cfg.m:
                mu = 0
                for b in self._warmup:
                    mu = (mu << 1) | b
                self._mu = mu
            return
        if self.score_source == "own":
            incs = self._own_attendances()
            self._map(
                lambda blk, inc: blk.update(self._mu, self._prev_mu, self.cfg.kind, inc),
                self.blocks, incs,
            )
        else:
            e = 2 * bit - 1
            self._map(
                lambda blk: blk.update(self._mu, self._prev_mu, self.cfg.kind, e),
                self.blocks,
            )
        self._prev_mu = self._mu
        self._mu = successor_index(self._mu, bit, self.cfg.m)
        self.t += 1
        self._own_cache = None


def run_ensemble(stream: ExternalStream, cfg: EnsembleConfig, *,
                 candidates: str = "best", score_source: str = "stream",
                 sharper_bound: bool = False, threads: int = 1) -> DecouplingCurves:
    """Decoupling-percentage curves for the whole stream.

    Analysis covers t = m .. T-2 (a full history must exist and the move at
    the two-step horizon must still be inside the stream).
    """
    T = len(stream)
    if T < cfg.m + ANALYSIS_END_MARGIN:
        raise InvalidInput(f"stream of {T} moves is too short for m={cfg.m} (need {cfg.m + 2})")
    n_steps = T - ANALYSIS_END_MARGIN - cfg.m + 1
    pos = np.zeros(n_steps, dtype=np.int64)
    neg = np.zeros(n_steps, dtype=np.int64)
    with EnsembleRunner(cfg, candidates=candidates, score_source=score_source,
                        sharper_bound=sharper_bound, threads=threads) as runner:
        for bit in stream.bits:
            t = runner.t
            if cfg.m <= t <= T - ANALYSIS_END_MARGIN:
                pos[t - cfg.m], neg[t - cfg.m] = runner.analyze()
            runner.observe(int(bit))
    return DecouplingCurves(t_start=cfg.m, pos_counts=pos, neg_counts=neg, n_mc=cfg.n_mc)


# ---------------------------------------------------------------------------
# synthetic stream generators

def gen_selfplay_stream(cfg: EnsembleConfig, length: int, seed: int | None = None) -> ExternalStream:
    """One self-play game's move sequence (the game's seeded initial history
    followed by its generated moves), as an external stream."""
    if length < cfg.m:
        raise InvalidInput(f"length {length} shorter than the initial history m={cfg.m}")
    seed = cfg.base_seed if seed is None else seed
    game = new_game(cfg.kind, cfg.n_agents, cfg.m, cfg.s, seed)
    head = [int(c) for c in game.history.bits()]
    body = selfplay_bits(game, length - cfg.m)
    bits = np.concatenate([np.array(head, dtype=np.uint8), body])
    meta = {"kind": cfg.kind.value, "n_agents": cfg.n_agents, "m": cfg.m, "s": cfg.s, "seed": seed}
    return ExternalStream(bits, source="selfplay", meta=meta)


def gen_return_to_mean_stream(up_run: int = 5, down_run: int = 3, n_agents: int = 11,
                              length: int = 200, seed: int = 0) -> ExternalStream:
    """Majority vote of contrarian rule-of-thumb agents.

    Each agent sells once the price has risen about up_run..up_run+1 steps
    in a row and buys once it has fallen about down_run..down_run+1 steps
    in a row; otherwise it follows the trend. The forced reversals keep the
    stream oscillating, so it never develops a long constant suffix.
    """
    if up_run < 1 or down_run < 1:
        raise InvalidInput("run thresholds must be >= 1")
    if length < 1:
        raise InvalidInput("length must be >= 1")
    rng = np.random.default_rng(seed)
    sell_after = rng.integers(up_run, up_run + 2, size=n_agents)
    buy_after = rng.integers(down_run, down_run + 2, size=n_agents)
    bits = np.empty(length, dtype=np.uint8)
    bits[0] = rng.integers(0, 2)
    run_dir = int(bits[0])
    run_len = 1
    for t in range(1, length):
        if run_dir == 1:
            actions = np.where(run_len >= sell_after, -1, 1)
        else:
            actions = np.where(run_len >= buy_after, 1, -1)
        a = int(actions.sum())
        if a > 0:
            b = 1
        elif a < 0:
            b = 0
        else:
            b = int(rng.integers(0, 2))
        bits[t] = b
        if b == run_dir:
            run_len += 1
        else:
            run_dir = b
            run_len = 1
    meta = {"up_run": up_run, "down_run": down_run, "n_agents": n_agents, "seed": seed}
    return ExternalStream(bits, source="return-to-mean", meta=meta)


def gen_iid_stream(length: int, seed: int = 0, p_up: float = 0.5) -> ExternalStream:
    """Independent fair-coin (or biased) moves; the no-structure baseline."""
    if length < 1:
        raise InvalidInput("length must be >= 1")
    if not 0.0 <= p_up <= 1.0:
        raise InvalidInput(f"p_up={p_up} outside [0, 1]")
    rng = np.random.default_rng(seed)
    bits = (rng.random(length) < p_up).astype(np.uint8)
    return ExternalStream(bits, source="iid", meta={"seed": seed, "p_up": p_up})


def bubble_corpus(cfg: EnsembleConfig, n_streams: int, length: int, *,
                  first_seed: int = 0, max_onset: int | None = None,
                  min_tail: int = 12) -> list[ExternalStream]:
    """Self-play streams that actually reached a bubble (a constant suffix).

    Scans seeds from first_seed upward and keeps streams whose terminal
    constant run starts early enough (>= min_tail moves of constant suffix,
    onset at most max_onset) until n_streams are collected.
    """
    from .detector import detect_t_b  # local import: detector sits above ensemble

    cap = length - min_tail if max_onset is None else min(max_onset, length - min_tail)
    out = []
    seed = first_seed
    while len(out) < n_streams:
        stream = gen_selfplay_stream(cfg, length, seed=seed)
        onset = detect_t_b(stream)
        if onset is not None and onset.t_b <= cap:
            stream.meta["t_b"] = onset.t_b
            out.append(stream)
        seed += 1
        if seed - first_seed > 100 * n_streams:
            raise RuntimeError("bubble corpus generation is not converging; check parameters")
    return out
