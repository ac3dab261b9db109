"""Agent-ensemble detection of speculative bubbles in bit-stream price histories."""

from .core import (
    Agent,
    Game,
    GameKind,
    History,
    InvalidInput,
    Strategy,
    all_histories,
    all_strategies,
    attendance,
    attendance_via_q,
    best_strategy,
    encode_history,
    new_game,
    selfplay_bits,
    step_selfplay,
    successor,
    update_payoffs_dollar,
    update_payoffs_mg,
)
from .decoupling import (
    DecoupledVerdict,
    Direction,
    GameDecoupling,
    ScoringContext,
    agent_decoupled,
    brute_force_sign_determined,
    game_decoupling,
    strategy_decoupled,
)
from .detector import (
    DecoupAlarm,
    Prediction,
    PredictionReport,
    TbOnset,
    build_report,
    detect_t_b,
    detect_t_b_decoup,
    naive_false_alarms,
    predict_two_ahead,
    predictions_over,
    score_predictions,
    tb_scaling_experiment,
)
from .ensemble import (
    DecouplingCurves,
    EnsembleConfig,
    EnsembleRunner,
    ExternalStream,
    bubble_corpus,
    gen_iid_stream,
    gen_return_to_mean_stream,
    gen_selfplay_stream,
    read_stream,
    run_ensemble,
    write_stream,
)

__version__ = "0.1.0"
