"""Deterministic data-preparation toolkit for tile-based vision-language training.

Submodules:
    geometry  tile planning, token accounting, 0-1000 coordinate grid
    formats   domain-record converters and the special-token grammar
    mixer     seeded domain/general mixture construction
    kernels   reference numerics (pixel unshuffle, cosine distillation loss)
    metrics   evaluation scores (MCQ, BLEU, ROUGE-L, signal errors)
    schema    line-delimited record envelopes
    cli       command-line pipeline driver
"""

from .errors import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidRecordError,
    NumericDomainError,
    OutOfBoundsError,
    PipelineError,
    RecordIOError,
    ShapeError,
    TokenParseError,
    UndefinedMetricError,
)
from .geometry import (
    ImageDims,
    MultiViewLayout,
    NormalizedBox,
    PixelBox,
    TilePlan,
    denormalize_box,
    multiview_layout,
    normalize_box,
    normalize_point,
    plan_tiles,
    token_count,
)
from .formats import (
    ClassificationRecord,
    ConversationSample,
    CTag,
    GroundingRecord,
    MultiViewRecord,
    OverlaySpec,
    PromptTemplate,
    RegionRecord,
    SpecialToken,
    VideoRecord,
    convert_classification,
    convert_grounding,
    convert_multiview,
    convert_region,
    convert_video,
    convert_vqa,
    parse_special_tokens,
    render_overlay,
)
from .kernels import (
    FeatureGrid,
    HiddenStateStack,
    ProjectorShape,
    distill_loss,
    pixel_shuffle,
    pixel_unshuffle,
    projector_shape,
)
from .metrics import (
    EvalPair,
    MetricReport,
    SignalPair,
    benchmark_average,
    bleu,
    control_signal_metrics,
    mcq_accuracy,
    rouge_l,
    weighted_score,
)
from .mixer import (
    DomainSource,
    GeneralSource,
    MixManifest,
    MixReport,
    mix,
    parse_ratio,
    repeat_dataset,
)
from .schema import Envelope, read_envelopes, validate_envelope, write_envelopes

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
