from .metrics import accuracy, logloss
from .model import (
    Ensemble,
    HyperParams,
    Tree,
    load_model,
    margin_to_proba,
    predict_proba,
    save_model,
    train,
)

__all__ = [
    "Ensemble",
    "HyperParams",
    "Tree",
    "accuracy",
    "load_model",
    "logloss",
    "margin_to_proba",
    "predict_proba",
    "save_model",
    "train",
]
