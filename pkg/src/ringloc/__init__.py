"""LiDAR global localization with Radon sinograms and translation-invariant spectra.

Typical use::

    from ringloc import PipelineConfig, build_index, localize, preprocess

    cfg = PipelineConfig()
    index = build_index(map_scans, cfg)
    result = localize(preprocess(query_cloud, cfg.preprocess), index)
"""

from .config import IcpConfig, PipelineConfig, load_config, save_config
from .errors import RinglocError
from .evaluation import QueryOutcome, associate, ate, compute_metrics, emit_report, rotation_error
from .features import FeatureBEV, GridConfig, extract_bev
from .icp import icp_refine
from .index_io import load_index, save_index
from .localization import (LocalizationResult, MapIndex, build_index, estimate_rotation, estimate_translation,
                           localize, recognize)
from .poses import Pose2, Pose3
from .scan_io import PointCloud, PreprocessConfig, ScanRecord, load_cloud, load_poses, preprocess, save_cloud
from .transforms import circular_corr, corr2d, normalize_ting, radon, ting

__version__ = "0.1.0"

__all__ = [
    "FeatureBEV", "GridConfig", "IcpConfig", "LocalizationResult", "MapIndex", "PipelineConfig", "PointCloud",
    "Pose2", "Pose3", "PreprocessConfig", "QueryOutcome", "RinglocError", "ScanRecord", "associate", "ate",
    "build_index", "circular_corr", "compute_metrics", "corr2d", "emit_report", "estimate_rotation",
    "estimate_translation", "extract_bev", "icp_refine", "load_cloud", "load_config", "load_index",
    "load_poses", "localize", "normalize_ting", "preprocess", "radon", "recognize", "rotation_error",
    "save_cloud", "save_config", "save_index", "ting",
]
