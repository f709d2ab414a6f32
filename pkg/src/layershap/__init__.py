"""Layer-contribution estimation for depth pruning.

Treats layer pruning as a cooperative game: stratified Monte Carlo mask
sampling supplies coalitions, a lightweight surrogate network predicts
coalition scores, and marginal-contribution averaging ranks layers for
removal. An exact brute-force oracle validates everything on small games.
"""

from .core import (
    HammingWeightPlan,
    Mask,
    MaskError,
    MaskScoreRecord,
    PruningPlan,
    ShapleyReport,
    UtilityOracle,
    apply_layer,
    mask_from_string,
)
from .oracles import (
    CountingOracle,
    MaskNotInTable,
    NormalizedOracle,
    ScoreTableError,
    ScoreTableOracle,
    SyntheticGameSpec,
    SyntheticOracle,
    load_game_spec,
    load_score_records,
    load_score_table,
    marginal_contribution,
    normalize_score,
    random_game_spec,
    save_game_spec,
    write_score_table,
)
from .pipeline import PipelineConfig, load_pipeline_config, run_all
from .pruning import best_pair_search, make_plan, rank_volatility
from .sampling import (
    SamplerConfig,
    allocate_per_stratum,
    sample_k_subset,
    sample_stratified,
)
from .shapley import (
    EstimatorConfig,
    OracleScorer,
    SurrogateScorer,
    convergence_sweep,
    efficiency_check,
    estimate_contributions,
    exact_shapley,
    spearman,
)
from .surrogate import (
    SurrogateModel,
    TrainConfig,
    gradient_check,
    load_checkpoint,
    r_squared,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
