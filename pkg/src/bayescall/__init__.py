"""Bayesian bidirectional-LSTM somatic variant calling with MC uncertainty."""

from .autodiff import (
    GradTape,
    Tensor,
    backward,
    grad_check,
    primitive_forward,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import (
    EvalReport,
    Histogram,
    OodSummary,
    PredictiveDistribution,
    evaluate,
    mc_predict,
    ood_report,
    predict_dataset,
)
from .network import (
    HEAD_DETERMINISTIC,
    HEAD_VARIATIONAL,
    DenseParams,
    LstmParams,
    Model,
    ModelSpec,
    bilstm_forward,
    lstm_cell_step,
    model_forward,
)
from .optimizer import AdamState, adam_step
from .pileup import (
    BaseCode,
    Dataset,
    LabeledExample,
    PairMatrix,
    SimulatorConfig,
    apply_mask,
    encode,
    load_dataset,
    save_dataset,
    simulate_dataset,
    simulate_example,
    split,
    undersample,
)
from .variational import (
    GaussianPrior,
    GaussianVariationalParams,
    LossReport,
    elbo_minibatch,
    flipout_forward,
    kl_gaussian_diag,
    sample_weights_reparam,
    softplus_sigma,
    standard_minibatch,
)

__version__ = "0.1.0"
