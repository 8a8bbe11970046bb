"""Piecewise-planar depth supervision and evaluation toolkit."""

from .errors import (DegenerateInputError, FormatError, PlanekitError, ShapeMismatchError,
                     ValidationError)
from .geometry import (CameraIntrinsics, DepthMap, PlanarRender, Plane3D, PointCloud, angle_between,
                       backproject, fit_plane_pca, fit_plane_ransac, orient_normals, project,
                       render_planar_depth)
from .masks import InstanceMaskSet, boxes_from_masks
from .gradient import GradientMap, dgs_loss, dgs_loss_grad, gradient_map, sobel_gradients
from .normals import (CombinedNormalMap, PsnSample, SamplingConfig, TripletBatch,
                      combined_normal_map, prepare_psn_sample, psn_loss, psn_loss_grad,
                      sample_triplets, triplet_normals)
from .losses import (LossBreakdown, LossWeights, dice_loss, focal_loss, rmse_loss, total_loss)
from .metrics import (APResult, DepthMetrics, IbimsMetrics, MetricsReport, SegMetrics,
                      average_precision, depth_metrics, ibims_dbe, ibims_dde, ibims_pe,
                      segmentation_metrics)
from .ppa import FeatureGrid, PpaWeights, load_weights, ppa_forward, save_weights
from .config import Config, load_config
from .synth import RoomSpec, SyntheticScene, generate_plane_scene, generate_scene
from .kernels import active_backend, available_backends, use_backend

__version__ = "0.1.0"
