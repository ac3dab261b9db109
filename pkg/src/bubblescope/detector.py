"""Bubble-onset detection and two-step-ahead prediction on top of the curves.

Two onset markers: t_b is where the stream's terminal constant-move run
begins (the bubble as seen in the price itself, only knowable in
hindsight); the decoupling alarm fires at the first step where a
decoupling curve has risen for m consecutive differences, which is
observable live and is robust against the false alarms a naive
"m identical moves" rule produces. Predictions are emitted whenever a
curve clears the confidence threshold, and score against the realized
move two steps later.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .core import GameKind, InvalidInput
from .ensemble import DecouplingCurves, EnsembleConfig, ExternalStream, gen_selfplay_stream

UP = "up"
DOWN = "down"


def _bits(stream) -> np.ndarray:
    if isinstance(stream, ExternalStream):
        return stream.bits
    return np.asarray(stream, dtype=np.uint8)


@dataclass(frozen=True)
class TbOnset:
    t_b: int
    direction: str  # "up" | "down"


@dataclass(frozen=True)
class DecoupAlarm:
    t: int  # bubble onset: where the confirmed rise began
    trigger_t: int  # confirmation time: end of the m rising differences
    direction: str


@dataclass(frozen=True)
class Prediction:
    t: int  # decision time
    horizon: int  # t + 2
    predicted_sign: int  # +-1
    confidence: float  # max curve value at t


@dataclass
class PredictionReport:
    total: int
    hits: int
    by_direction: dict
    misses: list = field(default_factory=list)

    @property
    def hit_rate(self) -> float | None:
        return self.hits / self.total if self.total else None


def detect_t_b(stream) -> TbOnset | None:
    """Start of the maximal constant suffix, if it spans at least 2 moves."""
    bits = _bits(stream)
    n = bits.shape[0]
    if n < 2:
        return None
    last = int(bits[-1])
    different = np.flatnonzero(bits != last)
    t_b = int(different[-1]) + 1 if different.size else 0
    if n - t_b < 2:
        return None
    return TbOnset(t_b=t_b, direction=UP if last else DOWN)


ALARM_LEVEL = 0.2  # smallest decoupling fraction a confirmed rise must reach


def _curve_trigger(counts: np.ndarray, m: int, n_mc: int,
                   level: float = ALARM_LEVEL) -> tuple[int, int] | None:
    """First index where the smoothed curve has risen for m straight steps.

    Differences are taken on 2-step window sums (integer-exact, start
    padded) so a single-step sampling dip of the finite ensemble does not
    break a real climb, and the confirmed rise must reach `level` so that
    noise staircases at the few-games level never fire. Zero differences
    break a run: a saturated curve cannot re-trigger. Returns
    (index, streak length ending there), or None if the curve never
    qualifies.
    """
    c = np.concatenate([counts[:1], counts]).astype(np.int64)
    s = c[1:] + c[:-1]  # twice the 2-step moving average
    need = 2 * n_mc * level
    streak = 0
    for k in range(1, s.shape[0]):
        streak = streak + 1 if s[k] > s[k - 1] else 0
        if streak >= m and s[k] >= need:
            return k, streak
    return None


def detect_t_b_decoup(curves: DecouplingCurves, m: int,
                      level: float = ALARM_LEVEL) -> DecoupAlarm | None:
    """Bubble onset from the decoupling curves' discrete derivatives.

    A curve triggers once it has risen for m consecutive (smoothed)
    differences and cleared the confidence floor; the reported onset is
    where that rise began, trigger_t the step that confirmed it. If both
    curves trigger at the same step, the one whose rise started earlier
    wins; still tied goes to "up".
    """
    if m < 1:
        raise InvalidInput(f"m must be >= 1, got {m}")
    pos = _curve_trigger(curves.pos_counts, m, curves.n_mc, level)
    neg = _curve_trigger(curves.neg_counts, m, curves.n_mc, level)
    if pos is None and neg is None:
        return None
    if neg is None or (pos is not None and pos[0] < neg[0]):
        k = pos[0]
        direction = UP
    elif pos is None or neg[0] < pos[0]:
        k = neg[0]
        direction = DOWN
    elif pos[1] >= neg[1]:
        k = pos[0]
        direction = UP
    else:
        k = neg[0]
        direction = DOWN
    return DecoupAlarm(t=curves.t_start + k - m, trigger_t=curves.t_start + k, direction=direction)


def naive_false_alarms(stream, m: int) -> list[int]:
    """Times before the bubble where m identical moves end and then reverse.

    With no bubble in the stream every reversing m-run counts.
    """
    bits = _bits(stream)
    n = bits.shape[0]
    onset = detect_t_b(bits)
    bound = onset.t_b if onset is not None else n
    alarms = []
    run = 1
    for t in range(n - 1):
        if t > 0:
            run = run + 1 if bits[t] == bits[t - 1] else 1
        if run >= m and bits[t + 1] != bits[t] and t < bound:
            alarms.append(t)
    return alarms


def predict_two_ahead(curves: DecouplingCurves, t: int, threshold: float = 0.98) -> Prediction | None:
    """Directional prediction for the move at t+2 when a curve clears threshold."""
    i = t - curves.t_start
    if not 0 <= i < len(curves):
        raise InvalidInput(f"t={t} outside the analyzable range of the curves")
    need = threshold * curves.n_mc - 1e-9
    pos, neg = int(curves.pos_counts[i]), int(curves.neg_counts[i])
    if pos >= need:
        return Prediction(t=t, horizon=t + 2, predicted_sign=1, confidence=pos / curves.n_mc)
    if neg >= need:
        return Prediction(t=t, horizon=t + 2, predicted_sign=-1, confidence=neg / curves.n_mc)
    return None


def predictions_over(curves: DecouplingCurves, threshold: float = 0.98) -> list[Prediction]:
    out = []
    for t in curves.times:
        p = predict_two_ahead(curves, int(t), threshold)
        if p is not None:
            out.append(p)
    return out


def score_predictions(predictions: list[Prediction], stream) -> PredictionReport:
    """Hits and misses against the realized moves at each prediction's horizon."""
    bits = _bits(stream)
    n = bits.shape[0]
    report = PredictionReport(total=0, hits=0, by_direction={1: [0, 0], -1: [0, 0]})
    for p in predictions:
        idx = p.horizon - 1  # move at time t+2 is the (t+2)-th move, index t+1
        if idx >= n:
            raise InvalidInput(f"prediction horizon {p.horizon} beyond stream of {n} moves")
        realized = 1 if bits[idx] else -1
        report.total += 1
        report.by_direction[p.predicted_sign][1] += 1
        if realized == p.predicted_sign:
            report.hits += 1
            report.by_direction[p.predicted_sign][0] += 1
        else:
            report.misses.append((p, realized))
    return report


@dataclass(frozen=True)
class ScalingRow:
    m: int
    runs: int
    n_defined: int
    undefined_fraction: float
    mean_t_b: float | None
    median_t_b: float | None


def tb_scaling_experiment(kind: GameKind | str = GameKind.DOLLAR,
                          m_values: tuple[int, ...] = (2, 3, 4),
                          runs: int = 200, n_agents: int = 11, s: int = 20,
                          steps: int | None = None, base_seed: int = 0) -> list[ScalingRow]:
    """Mean bubble onset over self-play seeds for each history length.

    Run length defaults to 12 * 2^m: scaled with the strategies'
    information content (like the quantity under study) and long enough
    that ~95%+ of $G seeds lock in. Seeds with no bubble are excluded from
    the averages and reported in the undefined fraction.
    """
    if runs < 1:
        raise InvalidInput(f"runs must be >= 1, got {runs}")
    kind = GameKind(kind)
    rows = []
    for m in m_values:
        length = steps if steps is not None else 12 * (1 << m)
        cfg = EnsembleConfig(n_mc=1, n_agents=n_agents, m=m, s=s, kind=kind, base_seed=base_seed)
        onsets = []
        for i in range(runs):
            onset = detect_t_b(gen_selfplay_stream(cfg, length, seed=base_seed + i))
            if onset is not None:
                onsets.append(onset.t_b)
        rows.append(ScalingRow(
            m=m,
            runs=runs,
            n_defined=len(onsets),
            undefined_fraction=(runs - len(onsets)) / runs,
            mean_t_b=float(np.mean(onsets)) if onsets else None,
            median_t_b=float(statistics.median(onsets)) if onsets else None,
        ))
    return rows


REPORT_VERSION = 1


def build_report(stream, curves: DecouplingCurves, m: int, threshold: float = 0.98,
                 manifest: dict | None = None) -> dict:
    """The analysis JSON document: onsets, false alarms, predictions, hit rate."""
    onset = detect_t_b(stream)
    alarm = detect_t_b_decoup(curves, m)
    predictions = predictions_over(curves, threshold)
    scored = score_predictions(predictions, stream)
    direction = onset.direction if onset else (alarm.direction if alarm else None)
    return {
        "report_version": REPORT_VERSION,
        "t_b": onset.t_b if onset else None,
        "t_b_direction": onset.direction if onset else None,
        "t_b_decoup": alarm.t if alarm else None,
        "t_b_decoup_direction": alarm.direction if alarm else None,
        "direction": direction,
        "false_alarms": naive_false_alarms(stream, m),
        "predictions": [
            {"t": p.t, "horizon": p.horizon, "predicted_sign": p.predicted_sign,
             "confidence": round(p.confidence, 6)}
            for p in predictions
        ],
        "hits": scored.hits,
        "total": scored.total,
        "hit_rate": scored.hit_rate,
        "manifest": manifest,
    }
