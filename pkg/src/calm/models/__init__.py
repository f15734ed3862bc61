"""Classifiers: Random Forest (primary) and MLP, plus model files."""

from .forest import RandomForestModel, RFConfig, rf_feature_importance, rf_predict, train_random_forest
from .mlp import MLPConfig, MlpModel, mlp_gradient_check, mlp_predict, train_mlp
from .serialize import load_model, save_model


def predict(model, X, feature_names=None):
    """``(labels, confidences)`` for either model type."""
    if isinstance(model, RandomForestModel):
        return rf_predict(model, X, feature_names)
    return mlp_predict(model, X, feature_names)


__all__ = [
    "RFConfig", "RandomForestModel", "train_random_forest", "rf_predict", "rf_feature_importance",
    "MLPConfig", "MlpModel", "train_mlp", "mlp_predict", "mlp_gradient_check",
    "save_model", "load_model", "predict",
]
