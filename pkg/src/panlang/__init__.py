"""Language-guided unsupervised pansharpening built on a small numpy autodiff engine."""
from .checkpoint import ParamSet
from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DependencyError,
    DimensionError,
    DivergenceError,
    FormatError,
    PanlangError,
    ParameterError,
    SizeError,
    TruncationError,
    VocabularyError,
)
from .metrics import MetricReport, ergas, evaluate, mpsnr, q2n, qnr, sam
from .protocol import (
    BDSDPansharpener,
    ExpPansharpener,
    SceneTriplet,
    SensorModel,
    WaldDegrader,
    bdsd_fuse,
    exp_upsample,
    make_triplet,
)
from .rasters import Raster, Scene, export_preview, read_raster, synth_scene, write_raster
from .stage1 import LanguageAligner, Stage1Config, train_stage1
from .stage2 import (
    LanguageGuidedPansharpener,
    PretrainConfig,
    ReducedResolutionPansharpener,
    Stage2Config,
    backbone_forward,
    pretrain_backbone_reduced,
    train_stage2,
)

__version__ = "0.1.0"

__all__ = [
    "BDSDPansharpener", "ConfigError", "ContractError", "DegenerateInputError", "DependencyError", "DimensionError",
    "DivergenceError", "ExpPansharpener", "FormatError", "LanguageAligner", "LanguageGuidedPansharpener",
    "MetricReport", "PanlangError", "ParamSet", "ParameterError", "PretrainConfig", "Raster",
    "ReducedResolutionPansharpener", "Scene", "SceneTriplet", "SensorModel", "SizeError", "Stage1Config",
    "Stage2Config", "TruncationError", "VocabularyError", "WaldDegrader", "backbone_forward", "bdsd_fuse", "ergas",
    "evaluate", "exp_upsample", "export_preview", "make_triplet", "mpsnr", "pretrain_backbone_reduced", "q2n", "qnr",
    "read_raster", "sam", "synth_scene", "train_stage1", "train_stage2", "write_raster",
]
