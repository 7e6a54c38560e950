"""Shadow removal toolkit.

Pipeline: segmentation-mask candidates -> shadow target mask -> K-stage
unrolled relighting solver -> optional enhancement blend -> region-wise
LAB-space evaluation.
"""

from .errors import (
    DecodeError,
    DegenerateRegionError,
    DeshadowError,
    EmptyCandidatesError,
    EmptyDatasetError,
    FormatError,
    NumericsError,
    PairingError,
    ShapeError,
    SpecError,
    StateError,
    WeightError,
)
from .illumination import (
    GAIN_BOUNDS,
    CurveParams,
    IlluminationMap,
    apply_shadow_model,
    blend_final,
    enhance_second_order,
)
from .imaging import (
    ImageTensor,
    ShadowMask,
    dilate,
    load_image,
    load_mask,
    luma,
    resize,
    save_image,
    save_mask,
    srgb_to_lab,
)
from .mask_prior import (
    CandidateMask,
    SelectionConfig,
    SelectionResult,
    ShadowScore,
    load_candidates,
    score_candidate,
    select_shadow_mask,
)
from .networks import SolverWeights, load_checkpoint, save_checkpoint
from .solver import (
    SolverConfig,
    StageTrace,
    fidelity_gradient,
    mask_reg_gradient,
    prior_gradient,
    run_solver,
    solve_image,
    unfold_step,
)
from .training import TrainConfig, TrainSample, load_dataset, loss, make_overfit_set, train

__version__ = "0.1.0"
