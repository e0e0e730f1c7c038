"""driftbench: a continual-learning lab for output-layer classifiers.

Trains gradient heads (linear, linear_nb, weightnorm, coslayer,
original_weightnorm, with optional single/group masking) and gradient-free
heads (knn, mean, median, slda) over feature-vector streams organized into
incremental, lifelong, and mixed task scenarios, and computes the
forgetting/interference diagnostics that go with them.
"""

from .data import Example, FeatureSet, SyntheticSpec, generate_synthetic, read_feature_file, write_feature_file
from .errors import (
    ConfigurationError,
    CorruptionError,
    DriftbenchError,
    FormatError,
    NumericalError,
    ScenarioError,
    ShapeError,
    StateError,
    ValidationError,
)
from .gradient_heads import (
    GradientHead,
    HeadGrads,
    HeadKind,
    MaskMode,
    apply_mask,
    default_learning_rate,
    init_head,
    logits,
    loss_and_gradient,
    predict,
    sgd_momentum_step,
)
from .scenario import (
    Scenario,
    TaskView,
    build_incremental,
    build_lifelong,
    build_mixed,
    permute_tasks,
    sample_subset,
)
from .similarity_heads import KnnState, PrototypeState, SldaState
from .training import (
    ReplayConfig,
    RunRecord,
    TrainConfig,
    evaluate,
    train_scenario,
    train_subset,
    train_with_replay,
)

__version__ = "0.1.0"
