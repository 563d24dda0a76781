"""Radar-optical fusion toolkit: reconstruct gappy NDVI time series with a
from-scratch CNN+BiLSTM network fused with Sentinel-1 features, and detect
grassland mowing events on the reconstructed series."""

from .cloudsim import (
    MaskPool,
    SynthConfig,
    SynthResult,
    apply_mask,
    bootstrap_mask,
    synth_dataset,
    synth_mask_pool,
)
from .core import (
    CHANNELS,
    NDVI_CHANNEL,
    SAR_CHANNELS,
    CloudMask,
    Dataset,
    ParcelLabel,
    PixelSeries,
    TemporalGrid,
    parcel_series,
)
from .detect import (
    Event,
    EventSet,
    Mda1Params,
    Mda2Params,
    detect_parcel,
    dnn_detect,
    mda1,
    mda2,
    train_dnn_detector,
)
from .evalx import (
    BinnedReport,
    CoverageBins,
    GapfillReport,
    MatchResult,
    ablation_experiment,
    binned_report,
    gapfill_eval,
    generalization_experiment,
    hidden_event_experiment,
    mae,
    match_events,
    prf,
    r_squared,
    split_parcels,
    subset_dataset,
)
from .features import derive_channels
from .fileio import (
    VERSION,
    FileFormatError,
    RunConfig,
    load_config,
    load_model,
    read_dataset,
    read_events,
    read_labels,
    read_manifest,
    read_mask_pools,
    save_model,
    write_dataset,
    write_events,
    write_manifest,
    write_mask_pools,
)
from .interp import fill_akima, fill_linear, fill_quadratic
from .preprocess import (
    DensityCriteria,
    OutlierParams,
    build_target,
    coverage,
    passes_density,
    remove_outliers,
)
from .sfmodel import (
    NDVI_SENTINEL,
    NormStats,
    SfArchitecture,
    SfModel,
    SfNet,
    TrainConfig,
    TrainingSet,
    TrainReport,
    assemble_training_set,
    cloud_filter,
    encode_arrays,
    encode_inputs,
    gapfill_sf,
    predict_batch,
    predict_pixel,
    sar_group_channels,
    sar_stack,
    train,
)

__version__ = VERSION

__all__ = [
    "CHANNELS",
    "NDVI_CHANNEL",
    "SAR_CHANNELS",
    "VERSION",
    "BinnedReport",
    "CloudMask",
    "CoverageBins",
    "Dataset",
    "DensityCriteria",
    "Event",
    "EventSet",
    "FileFormatError",
    "GapfillReport",
    "MaskPool",
    "MatchResult",
    "Mda1Params",
    "Mda2Params",
    "NDVI_SENTINEL",
    "NormStats",
    "OutlierParams",
    "ParcelLabel",
    "PixelSeries",
    "RunConfig",
    "SfArchitecture",
    "SfModel",
    "SfNet",
    "SynthConfig",
    "SynthResult",
    "TemporalGrid",
    "TrainConfig",
    "TrainReport",
    "TrainingSet",
    "ablation_experiment",
    "apply_mask",
    "assemble_training_set",
    "binned_report",
    "bootstrap_mask",
    "build_target",
    "cloud_filter",
    "coverage",
    "derive_channels",
    "detect_parcel",
    "dnn_detect",
    "encode_arrays",
    "encode_inputs",
    "fill_akima",
    "fill_linear",
    "fill_quadratic",
    "gapfill_eval",
    "gapfill_sf",
    "generalization_experiment",
    "hidden_event_experiment",
    "load_config",
    "load_model",
    "mae",
    "match_events",
    "mda1",
    "mda2",
    "parcel_series",
    "passes_density",
    "predict_batch",
    "predict_pixel",
    "prf",
    "r_squared",
    "split_parcels",
    "subset_dataset",
    "read_dataset",
    "read_events",
    "read_labels",
    "read_manifest",
    "read_mask_pools",
    "remove_outliers",
    "sar_group_channels",
    "sar_stack",
    "save_model",
    "synth_dataset",
    "synth_mask_pool",
    "train",
    "train_dnn_detector",
    "write_dataset",
    "write_events",
    "write_manifest",
    "write_mask_pools",
]
