"""Two-stage autoencoder detection of falsified cell KPI reports."""

from .detector import (Ae1Detector, Ae1PlusDetector, BundleSchemaError, MarrsDetector,
                       MissingCellError, build_x2, embed, load_bundle, network_mean_input,
                       save_bundle, train_ae1, train_ae2)
from .features import (FEATURE_NAMES, N_FEATURES, FeatureScaler, FeatureWindow,
                       StandardizationLeak, extract_features, raw_feature_table, sliding_windows,
                       stack_windows)
from .rules import (RULES, TRUSTED, UNTRUSTED, Threshold, Verdict, calibrate_threshold,
                    classify_loss, classify_sequence, f1_score, max_f1_threshold, sequence_label)

__all__ = [
    "Ae1Detector", "Ae1PlusDetector", "BundleSchemaError", "MarrsDetector", "MissingCellError",
    "build_x2", "embed", "load_bundle", "network_mean_input", "save_bundle", "train_ae1",
    "train_ae2", "FEATURE_NAMES", "N_FEATURES", "FeatureScaler", "FeatureWindow",
    "StandardizationLeak", "extract_features", "raw_feature_table", "sliding_windows",
    "stack_windows", "RULES", "TRUSTED", "UNTRUSTED", "Threshold", "Verdict",
    "calibrate_threshold", "classify_loss", "classify_sequence", "f1_score", "max_f1_threshold",
    "sequence_label",
]
