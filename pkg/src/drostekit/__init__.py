"""drostekit: unroll Droste-warped artwork, inpaint the gaps, rewarp, and score the results."""

from .conformal import DrosteParams, compute_alpha, forward_map, inverse_map, self_similarity
from .errors import (
    BackendError,
    ConfigError,
    DomainError,
    DrosteKitError,
    UnsupportedInputError,
)
from .inpaint import (
    BackendDescriptor,
    InpaintResult,
    diffusion_fill,
    patch_fill,
    run_backend,
    run_external,
)
from .iqa import (
    SvrModel,
    brisque_features,
    brisque_score,
    dom_score,
    fit_aggd,
    fit_ggd,
    mscn,
)
from .masking import MaskClass, MaskSpec, classify, extract_blank, random_mask
from .raster import Mask, RasterImage, luma601, psnr
from .report import (
    ExperimentRecord,
    MetricSummary,
    ScoreReport,
    metric_polarity,
    read_records_csv,
    render_report,
    write_records_csv,
)
from .stats import AnovaResult, anova_oneway, coefficient_of_variation, f_critical
from .warp import (
    SamplerSpec,
    StraightSet,
    load_straight_set,
    resample,
    rewarp,
    roundtrip_psnr,
    save_straight_set,
    unroll,
)

__version__ = "0.1.0"
