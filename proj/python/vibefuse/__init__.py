from ._vibefuse import (
    Config,
    StructuralModel,
    VibefuseError,
    lhs_normal,
    load_dataset,
    normal_quantile,
    predict_mfdfcnn,
    predict_mlmrgp,
    run_cli,
)

__all__ = [
    "Config",
    "StructuralModel",
    "VibefuseError",
    "lhs_normal",
    "load_dataset",
    "normal_quantile",
    "predict_mfdfcnn",
    "predict_mlmrgp",
    "run_cli",
]
