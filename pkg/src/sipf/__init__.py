"""Rotation-invariant point-cloud descriptors with a learned shadow reference.

The pipeline: per-point local reference frames feed pairwise pose
descriptors; a shared "shadow" rotation augments them with global pose
context while keeping the whole construction rotation invariant; an
attention-based convolution layer consumes the descriptor stacks; a Bingham
distribution over unit quaternions supplies and adapts the shadow rotation
during training.
"""

from .bingham import (
    BinghamParams,
    BinghamSeed,
    NormalizationResult,
    birdal_V,
    entropy,
    lambda_from,
    log_unnormalized_density,
    mode,
    normalization,
    params_from_seed,
    sample,
)
from .descriptors import (
    MASK_PPF,
    MASK_SIPF,
    MASK_SIPF_NO_DIRECTION,
    ShadowCloud,
    detect_axis_alignment,
    detect_local_coincidence,
    ppf,
    shadow_of,
    sipf,
    sipf_field,
    sipf_stack,
    sippf,
)
from .errors import (
    CoincidentPointError,
    DegenerateFrameError,
    DegenerateGeometryError,
    InvalidArgumentError,
    InvalidInputError,
    NumericError,
    ParseError,
    SamplerStallError,
    SipfError,
)
from .geometry import (
    NeighborGraph,
    PointCloud,
    Rotation3,
    UnitQuaternion,
    apply_rotation,
    knn_graph,
    matrix_to_quat,
    quat_to_matrix,
    quaternion_distance,
    random_rotation,
    rotation_from_axis_angle,
)
from .lrf import (
    LocalFrame,
    barycenter_axis,
    build_all_lrfs,
    build_lrf,
    input_descriptor,
)
from .riattn import (
    RIAttnLayer,
    backward,
    kernel_weights,
    layer_forward,
    reversed_edgeconv,
    ri_attention,
    riattnconv_forward,
    total_loss,
)
from .training import ToyTaskConfig, make_wingtip_dataset, train_toy

__version__ = "0.1.0"
