"""Crown labels from segmented TLS point clouds and detection evaluation against them."""

__version__ = "0.1.0"

from .geom import BBox, GeometryError, GridSpec, Polygon
from .ingest import ParseError, PlotCloudSet, TreeCloud, read_plot_dir
from .labelgen import (
    CanopyMosaic,
    CrownLabel,
    LabelGenConfig,
    generate_labels,
    label_plot,
    read_labels,
    write_labels,
)
from .metrics import EvalConfig, EvalResult, UndefinedMetricError, evaluate
from .predictions import Detection, TilingConfig, merge_tiled, nms, read_detections
from .experiment import GridSearchSpec, run_gridsearch, select_best, summarize_labels

__all__ = [
    "BBox", "GeometryError", "GridSpec", "Polygon",
    "ParseError", "PlotCloudSet", "TreeCloud", "read_plot_dir",
    "CanopyMosaic", "CrownLabel", "LabelGenConfig", "generate_labels", "label_plot",
    "read_labels", "write_labels",
    "EvalConfig", "EvalResult", "UndefinedMetricError", "evaluate",
    "Detection", "TilingConfig", "merge_tiled", "nms", "read_detections",
    "GridSearchSpec", "run_gridsearch", "select_best", "summarize_labels",
]
