"""Soft-body proprioception: corotational FEM forward model, synthetic multi-tap resistive
sensing, learned resistance-to-shape regression and inverse force/shape estimation."""
from .calibration import CalibrationResult, calibrate_scaling_factor, golden_section, identify_young_modulus
from .constraints import (ConstraintSet, ForceConstraint, LengthConstraint, PoseEffector, PressureConstraint,
                          compute_compliance)
from .errors import (DegenerateElement, DegenerateSegment, Diverged, IllConditioned, NoMinimumInInterval,
                     NonConvergence, PointOutsideMesh, ShapeMismatch, SingularSystem, SoftProprioError,
                     SolverError, ValidationError)
from .fem import (Material, SystemState, assemble_tangent_stiffness, elastic_energy, element_stiffness,
                  internal_forces, quasi_static_step)
from .geometry import BarycentricAnchor, Centerline, TriMesh, barycentric_coords, strip_mesh, structured_mesh
from .inverse import InverseModel, QpProblem, QpSolution, solve_qp
from .pipeline import MetricsReport, Recording, reconstruct_and_score, run_forward
from .regressor import ShapeRegressor, predict_shape, train_regressor
from .scenario import Device, build_device, load_preset
from .sensor import Dataset, SensorLayout, build_dataset, resample_dataset, simulate_resistance

__version__ = "0.1.0"
