"""Urban RF multipath dataset generator.

Builds 3D block scenes (procedural or imported from GeoJSON footprints),
traces explicit multipath between a transmitter and a dense receiver grid
(direct, specular, knife-edge diffraction, optional diffuse scattering), and
exports per-path channel parameters in reproducible, documented formats.
"""

from .config import (
    ConfigError,
    GridSpec,
    TraceConfig,
    apply_overrides,
    config_to_dict,
    config_to_yaml,
    default_config,
    load_config,
    validate_config,
)
from .geometry import (
    Bvh,
    Hit,
    Ray,
    RxPoint,
    build_bvh,
    filter_outdoor_receivers,
    intersect,
    intersect_many,
    occluded,
    occluded_many,
    point_inside_building,
)
from .pipeline import (
    DegradationEvent,
    QcReport,
    ReceiverRecord,
    ResultSet,
    qc_check,
    run_trace,
)
from .raytracer import (
    AngleSpec,
    PathTracer,
    PathType,
    PropagationPath,
    direction_to_angles,
    enumerate_reflections,
    fresnel_coefficients,
    knife_edge_loss_db,
    trace_diffraction,
    trace_los,
    trace_receiver,
    trace_scattering,
    wrap_phase,
)
from .scene import (
    Building,
    Facet,
    MaterialParams,
    ProcGenParams,
    Scene,
    SceneError,
    Triangle,
    TriangleMesh,
    export_scene,
    generate_procedural_scene,
    import_footprints,
    import_scene,
    scene_id,
    triangulate,
)

__version__ = "0.1.0"

__all__ = [
    "AngleSpec", "Building", "Bvh", "ConfigError", "DegradationEvent", "Facet",
    "GridSpec", "Hit", "MaterialParams", "PathTracer", "PathType",
    "ProcGenParams", "PropagationPath", "QcReport", "Ray", "ReceiverRecord",
    "ResultSet", "RxPoint", "Scene", "SceneError", "TraceConfig", "Triangle",
    "TriangleMesh", "apply_overrides", "build_bvh", "config_to_dict",
    "config_to_yaml", "default_config", "direction_to_angles",
    "enumerate_reflections", "export_scene", "filter_outdoor_receivers",
    "fresnel_coefficients", "generate_procedural_scene", "import_footprints",
    "import_scene", "intersect", "intersect_many", "knife_edge_loss_db",
    "load_config", "occluded", "occluded_many", "point_inside_building",
    "qc_check", "run_trace", "scene_id", "trace_diffraction", "trace_los",
    "trace_receiver", "trace_scattering", "triangulate", "validate_config",
    "wrap_phase",
]
