"""Fusing cross network (FCN) for click-through-rate prediction.

A self-contained library and CLI implementing explicit feature crossing
with exponential (ECN) and linear (LCN) interaction-order growth, a
self-mask noise filter, dual sigmoid heads fused by their mean, and the
adaptive Tri-BCE training objective. All gradients are derived by hand
and audited against finite differences; see the ``verification`` module.
"""

from fcn_ctr.numerics import Rng, derive_seed
from fcn_ctr.features import FeatureSchema, FieldSpec, EncodedBatch
from fcn_ctr.model import ModelConfig, ModelParams, init_model_params, forward, backward, param_count
from fcn_ctr.objective import TriLossReport, bce, tri_bce, tri_bce_grads
from fcn_ctr.metrics import EvalResult, auc, logloss
from fcn_ctr.training import TrainConfig, train, evaluate

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "derive_seed",
    "FeatureSchema",
    "FieldSpec",
    "EncodedBatch",
    "ModelConfig",
    "ModelParams",
    "init_model_params",
    "forward",
    "backward",
    "param_count",
    "TriLossReport",
    "bce",
    "tri_bce",
    "tri_bce_grads",
    "EvalResult",
    "auc",
    "logloss",
    "TrainConfig",
    "train",
    "evaluate",
    "__version__",
]
