"""Deterministic skin-lesion image augmentation and evaluation toolkit."""

from .imgcore import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    ImageBuffer,
    Manifest,
    ManifestError,
    ManifestRecord,
    NormalizedTensor,
    RngStream,
    Sample,
    denormalize,
    derive_stream,
    load_image,
    load_manifest,
    load_mask,
    load_sample,
    normalize,
    resize_max_side,
    resize_to,
    save_image,
    save_manifest,
)
from .photometric import (
    ColorJitterParams,
    adjust_brightness,
    adjust_contrast,
    adjust_saturation,
    apply_color_jitter,
    sample_color_jitter,
    shift_hue,
)
from .geometric import (
    AffineParams,
    CropWindow,
    apply_affine,
    crop,
    crop_and_resize,
    flip_horizontal,
    flip_vertical,
    random_flip,
    sample_affine,
    sample_crop,
)
from .erasing import ErasingParams, random_erasing
from .elastic_tps import (
    GRID_ORIGINS,
    ControlGrid,
    TpsFitError,
    TpsModel,
    elastic_warp,
    fit_tps,
    sample_control_grid,
    tps_evaluate,
    warp_with_grid,
)
from .lesionmix import MixParams, histogram_match, lesion_mix
from .pipeline import (
    SCENARIO_COMPOSITION,
    SCENARIO_IDS,
    SCENARIO_NAMES,
    AugmentConfig,
    AugmentJob,
    StageError,
    TransformChain,
    apply_chain,
    apply_chain_labeled,
    augment_dataset,
    build_scenario,
    load_config,
    manifest_partner_provider,
)
from .tta_eval import (
    EarlyStopState,
    EvalAborted,
    EvalConfig,
    ExternalProcessPredictor,
    FunctionPredictor,
    PredictionFilePredictor,
    PredictorError,
    RocPoint,
    compute_auc,
    crops_144,
    early_stop_step,
    evaluate,
    predict_tta,
    roc_curve,
    sample_subset,
)

__version__ = "0.1.0"
