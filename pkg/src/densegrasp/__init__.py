"""Dense-label synthetic grasp datasets, grasp optimization and simulated evaluation."""
from .errors import (CorruptFileError, DatasetError, DegenerateMeshError, DenseGraspError, MeshParseError,
                     NoExecutableGrasp, OpenContactError, PlacementFailure, RenderError, SceneRejected,
                     ValidationError)
from .mesh_scene import Scene, SceneConfig, SceneObject, TriMesh, load_mesh, randomize_scene
from .depth_render import CameraModel, DepthImage, render_depth
from .grasp_sampler import GraspCandidate, GripperModel, sample_antipodal
from .grasp_quality import ferrari_canny, force_closure, primitive_wrenches
from .label_gen import AffordanceMap, LabelingConfig, OrientationBin, build_affordance_map, quantize_orientation
from .loss_fn import weighted_ce_grad, weighted_ce_loss
from .grasp_optimizer import OptimizedGrasp, OptimizerConfig, select_best
from .eval_harness import EvalReport, TrialResult, run_eval, simulate_grasp
from .pipeline import GenerateConfig, generate_dataset

__version__ = "0.1.0"
