"""taetlab: a desk-scale laboratory for adversarially robust learning on
long-tailed data.

The package covers the full experimental loop in plain numpy: an MLP with
exact reverse-mode gradients, long-tailed dataset construction, the balanced
and hierarchical-equalization loss families, FGSM/PGD/CW attacks, two-stage
adversarial equalization training with baselines, balanced accuracy and
balanced robustness metrics, training cost models, and a reproducible
experiment runner.
"""

__version__ = "0.1.0"

from .network import (  # noqa: F401
    ModelSpec,
    Model,
    OptimizerState,
    LrSchedule,
    init_model,
    forward,
    loss_and_grads,
    input_gradient,
    sgd_step,
    lr_at_epoch,
    save_checkpoint,
    load_checkpoint,
)
from .data import (  # noqa: F401
    Dataset,
    LongTailDataset,
    ImbalanceProfile,
    longtail_counts,
    subsample_longtail,
    gen_gaussian_mixture,
    split_per_class,
    load_external,
    batches,
)
from .losses import (  # noqa: F401
    ClassLossVector,
    HelWeights,
    BslConfig,
    cross_entropy,
    balanced_softmax_loss,
    per_sample_cross_entropy,
    class_losses,
    bcl,
    hdl,
    rcel,
    hel,
    CeLoss,
    BslLoss,
    HelLoss,
)
from .attacks import AttackConfig, CwConfig, fgsm, pgd, cw_l2  # noqa: F401
from .training import (  # noqa: F401
    TrainConfig,
    EpochRecord,
    TrainOutcome,
    train,
    train_run,
    train_taet,
    train_at,
    train_at_bsl,
    checkpoint,
    restore,
)
from .metrics import (  # noqa: F401
    EvalAttack,
    MetricsReport,
    confusion,
    balanced_accuracy,
    balanced_robustness,
    standard_accuracy,
    report,
)
from .efficiency import (  # noqa: F401
    TimeModel,
    MemoryModel,
    predict_eta,
    predict_memory_saving,
    measure_phase_costs,
)
