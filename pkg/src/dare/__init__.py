"""Direction-aware freehand 3D ultrasound reconstruction and reslicing.

The pipeline: a tracked 2D sweep is synchronized and scattered into a
directional voxel grid that keeps every sample's acquisition orientation;
virtual planes are then resliced in real time with angular thresholding and
exponential orientation/distance weighting, alongside a conventional
direction-blind mean-compounding baseline for comparison.
"""

from .errors import (
    DareError,
    InvalidArgumentError,
    OutOfBoundsError,
    ProtocolError,
    SweepFormatError,
    SynchronizationError,
    UndefinedMetricError,
    VolumeFormatError,
)
from .geometry import FrameAxes, Pose, Quaternion, frame_axes, rotate, slerp
from .volume import (
    BoundingBox,
    DirectionalSample,
    DirectionalVolume,
    VolumeBuilder,
    compute_bounds,
    load_volume,
    save_volume,
)
from .reconstruct import (
    SweepRecording,
    TrackedFrame,
    load_sweep,
    pixel_to_world,
    reconstruct_volume,
    save_sweep,
    synchronize,
)
from .reslice import (
    ReslicePlane,
    ResliceConfig,
    ResliceImage,
    accept,
    directional_dots,
    reslice,
    reslice_bruteforce,
    sample_weight,
)
from .baseline import (
    ScalarVolume,
    compound,
    fill_holes,
    load_scalar_volume,
    reslice_trilinear,
    save_scalar_volume,
)
from .phantom import (
    PhantomScene,
    Slab,
    Sphere,
    SweepPlan,
    Tube,
    ground_truth_reslice,
    render_frame,
    simulate_sweep,
)
from .evaluation import (
    ComparisonReport,
    SimilarityResult,
    ncc,
    run_comparison,
    ssim,
    time_reslice,
    wilcoxon_signed_rank,
)
from .service import ResliceServer, ResliceServiceClient

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
