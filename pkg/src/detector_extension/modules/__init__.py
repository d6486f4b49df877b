"""
核心模块包

包含特征存储、相似度计算、推理引擎、轨迹校正和模拟后端
"""

from .exceptions import ExtensionError, StageFailure
from .feature_store import FeatureStore, load_feature_store, validate_store
from .inference_engine import (
    ClassifierInterface,
    DetectorInterface,
    correct_prediction,
    crop_box,
    run_dual_parallel,
    run_sequential,
)
from .mock_backends import load_scenario, mock_classifier, mock_detector
from .similarity import (
    CompatibilityMap,
    compute_centroid,
    select_compatible,
    similarity_matrix,
)
from .tracker_correction import best_crop_per_track, correct_tracks, run_tracked
from .utils import format_error_response, setup_logging

__all__ = [
    "ExtensionError",
    "StageFailure",
    "FeatureStore",
    "load_feature_store",
    "validate_store",
    "ClassifierInterface",
    "DetectorInterface",
    "correct_prediction",
    "crop_box",
    "run_dual_parallel",
    "run_sequential",
    "load_scenario",
    "mock_classifier",
    "mock_detector",
    "CompatibilityMap",
    "compute_centroid",
    "select_compatible",
    "similarity_matrix",
    "best_crop_per_track",
    "correct_tracks",
    "run_tracked",
    "format_error_response",
    "setup_logging",
]
