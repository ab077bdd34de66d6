"""Amputation-aware body modeling toolkit.

A kinematic-tree body model with zero-rotation limb masking, the dual
codebook pose tokenizer machinery, pose/mesh evaluation metrics, and the
geometric pieces of a synthetic annotation pipeline.
"""

from .amputation import (
    AmputationLabel,
    LimbClass,
    apply_mask,
    binary_decision,
    binary_from_logits,
    format_label,
    index_from_label,
    index_to_label,
    label_from_index,
    label_to_joints,
    limb_class_to_joints,
    mask_bits,
    mask_keypoints_2d,
    parse_label,
)
from .annotations import (
    AnnotationRecord,
    emit_record,
    read_record,
    records_equal,
    validate_record,
    write_record,
)
from .body import (
    BodyTemplate,
    MeshResult,
    NUM_BETAS,
    NUM_JOINTS,
    PARENTS,
    export_obj,
    forward,
    identity_pose,
    load_template,
    make_toy_template,
    regress_joints,
    rest_joints,
    save_template,
    shape_vertices,
    validate_pose,
)
from .config import Config, load_config, save_config
from .errors import (
    AmpkinError,
    ConfigurationError,
    DegenerateGeometryError,
    DegenerateRotationError,
    InvalidInputError,
    SchemaError,
)
from .metrics import (
    ConfusionStats,
    JointSet,
    LossComponents,
    LossWeights,
    confusion_stats,
    cross_entropy_cls,
    joint_set_for_label,
    joints2d_loss,
    joints3d_loss,
    mpjpe,
    mve,
    overall_loss,
    pa_mpjpe,
    pose_loss_6d,
    shape_loss,
    similarity_align,
    surviving_vertex_mask,
)
from .rotations import (
    axis_angle_to_matrix,
    is_rotation,
    is_zero_matrix,
    matrix_to_6d,
    matrix_to_axis_angle,
    rot6d_to_matrix,
)
from .synth import (
    HeatmapStack,
    WeakPerspectiveCamera,
    composite_overlay,
    inject_keypoint_noise,
    load_heatmaps,
    load_png,
    project_weak_perspective,
    rasterize_heatmaps,
    save_heatmaps,
    save_png,
    ssim,
    ssim_gate,
)
from .tokenizer import (
    Codebook,
    MeshTargets,
    TokenizerLossWeights,
    ema_update,
    load_codebook,
    quantize,
    reset_dead_codes,
    save_codebook,
    soft_decode,
    switch_and_decode,
    tokenizer_loss,
)

__version__ = "0.1.0"
