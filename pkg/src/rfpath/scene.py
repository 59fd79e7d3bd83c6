"""Urban scene model: materials, footprints, procedural synthesis, meshing, I/O.

A scene is a bounded 2D set of building footprints with heights and material
names, plus a flat ground plane at z = 0. Buildings are flat-roofed prisms;
``triangulate`` extrudes them into a triangle mesh grouped into planar facets
(one facet per wall, roof, or the ground) so downstream specular tracing can
treat each planar surface as a single reflector.
"""

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import VACUUM_PERMITTIVITY_F_M

EARTH_RADIUS_M = 6371000.0
CELL_MARGIN_M = 2.0
MIN_BUILDING_HEIGHT_M = 3.0
MAX_BUILDING_HEIGHT_M = 100.0
DEFAULT_LEVEL_HEIGHT_M = 3.0
DEFAULT_IMPORT_HEIGHT_M = 10.0
SCENE_SCHEMA_VERSION = "1.0"

KIND_WALL = "wall"
KIND_ROOF = "roof"
KIND_GROUND = "ground"


class SceneError(ValueError):
    """Invalid geometry, infeasible generation parameters, or scene-file schema violations."""


@dataclass(frozen=True)
class MaterialParams:
    """Electromagnetic surface description used by the reflection model."""

    name: str
    eps_r: float
    conductivity_s_per_m: float
    scattering_coeff: float = 0.2

    def complex_permittivity(self, frequency_hz: float) -> complex:
        """Relative permittivity eps_r - j*sigma/(2*pi*f*eps0); Im <= 0 for f > 0."""
        return complex(
            self.eps_r,
            -self.conductivity_s_per_m
            / (2.0 * math.pi * frequency_hz * VACUUM_PERMITTIVITY_F_M),
        )


# Mid-band bulk parameters for the three stock materials. Overridable per run.
DEFAULT_MATERIALS = {
    "concrete": MaterialParams("concrete", 5.24, 0.46, 0.2),
    "glass": MaterialParams("glass", 6.31, 0.02, 0.2),
    "metal": MaterialParams("metal", 1.0, 1.0e7, 0.2),
}


@dataclass(frozen=True)
class Building:
    """One extruded footprint. The footprint is a simple CCW polygon in meters."""

    id: int
    footprint: tuple[tuple[float, float], ...]
    height_m: float
    material: str


def _default_materials() -> dict[str, MaterialParams]:
    return dict(DEFAULT_MATERIALS)


@dataclass(frozen=True)
class Scene:
    """Immutable scene: bounds, ground, buildings, and the material table."""

    bounds: tuple[float, float, float, float] = (-64.0, -64.0, 64.0, 64.0)
    ground_material: str = "concrete"
    buildings: tuple[Building, ...] = ()
    geo_origin: tuple[float, float] | None = None
    seed: int = 0
    materials: dict[str, MaterialParams] = field(default_factory=_default_materials)


def scene_id(scene: Scene) -> str:
    """Stable identifier: lat/lon for imported scenes, the seed otherwise."""
    if scene.geo_origin is not None:
        lat, lon = scene.geo_origin
        return f"{lat:.6f}_{lon:.6f}"
    return str(scene.seed)


# ---------------------------------------------------------------------------
# polygon helpers


def signed_area(poly) -> float:
    """Shoelace signed area; positive for CCW vertex order."""
    total = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper intersection test between open segments (shared endpoints excluded)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def is_simple_polygon(poly) -> bool:
    """True when no two non-adjacent edges intersect. O(n^2), fine for footprints."""
    n = len(poly)
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _point_in_triangle(p, a, b, c) -> bool:
    # Inclusive of the boundary; used to reject ears containing other vertices.
    d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
    d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
    has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (has_neg and has_pos)


def ear_clip(poly) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon by ear clipping.

    Returns index triples into ``poly``. Collinear vertices are removed
    without emitting degenerate triangles, so the triangle areas always sum
    to the polygon area. Raises SceneError when no ear exists (non-simple
    input).
    """
    n = len(poly)
    if n < 3:
        raise SceneError("polygon has fewer than 3 vertices")
    idx = list(range(n))
    tris: list[tuple[int, int, int]] = []
    while len(idx) > 3:
        clipped = False
        m = len(idx)
        for k in range(m):
            ia, ib, ic = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = poly[ia], poly[ib], poly[ic]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 0.0:
                continue
            if any(
                _point_in_triangle(poly[io], a, b, c)
                for io in idx
                if io not in (ia, ib, ic)
            ):
                continue
            tris.append((ia, ib, ic))
            idx.pop(k)
            clipped = True
            break
        if not clipped:
            # Only collinear "ears" left: drop the middle vertex, no area lost.
            for k in range(m):
                ia, ib, ic = idx[k - 1], idx[k], idx[(k + 1) % m]
                a, b, c = poly[ia], poly[ib], poly[ic]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if cross == 0.0:
                    idx.pop(k)
                    clipped = True
                    break
            if not clipped:
                raise SceneError("ear clipping failed: polygon is not simple")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def validate_building(b: Building) -> list[str]:
    problems = []
    if len(b.footprint) < 3:
        problems.append(f"building {b.id}: footprint has fewer than 3 vertices")
        return problems
    if signed_area(b.footprint) <= 0.0:
        problems.append(f"building {b.id}: footprint is not counterclockwise")
    if not is_simple_polygon(b.footprint):
        problems.append(f"building {b.id}: footprint is self-intersecting")
    if not b.height_m > 0.0:
        problems.append(f"building {b.id}: height must be positive")
    return problems


def validate_scene(scene: Scene) -> list[str]:
    """Check scene invariants; returns human-readable violations."""
    problems = []
    xmin, ymin, xmax, ymax = scene.bounds
    if not (xmax > xmin and ymax > ymin):
        problems.append("bounds: empty rectangle")
    if scene.ground_material not in scene.materials:
        problems.append(f"ground material {scene.ground_material!r} not in material table")
    for b in scene.buildings:
        problems.extend(validate_building(b))
        if b.material not in scene.materials:
            problems.append(f"building {b.id}: material {b.material!r} not in material table")
        for x, y in b.footprint:
            if not (xmin <= x <= xmax and ymin <= y <= ymax):
                problems.append(f"building {b.id}: vertex ({x}, {y}) outside bounds")
                break
    return problems


# ---------------------------------------------------------------------------
# procedural generation


@dataclass(frozen=True)
class ProcGenParams:
    """Knobs for the parametric block generator.

    The scene square of side ``bounds_m`` is divided into ``block_grid`` x
    ``block_grid`` cells; each cell independently hosts one axis-aligned
    rectangular building with at least 2 m clearance to the cell border so
    streets always remain between neighbours.
    """

    block_grid: int = 8
    building_probability: float = 0.5
    footprint_min_m: float = 6.0
    footprint_max_m: float = 12.0
    height_mu_log: float = math.log(12.0)
    height_sigma_log: float = 0.5
    bounds_m: float = 128.0


def generate_procedural_scene(params: ProcGenParams, seed: int) -> Scene:
    """Deterministically synthesize a block scene from (params, seed)."""
    k = params.block_grid
    side = params.bounds_m
    cell = side / k
    usable = cell - 2.0 * CELL_MARGIN_M
    if params.footprint_max_m > usable:
        raise SceneError(
            f"infeasible parameters: footprint_max_m {params.footprint_max_m} exceeds "
            f"usable cell size {usable} (cell {cell} minus {CELL_MARGIN_M} m margins)"
        )
    if not 0.0 <= params.building_probability <= 1.0:
        raise SceneError("building_probability must lie in [0, 1]")
    half = side / 2.0
    rng = np.random.default_rng(seed)
    material_names = ("concrete", "glass", "metal")
    buildings = []
    for j in range(k):
        for i in range(k):
            if rng.random() >= params.building_probability:
                continue
            w = rng.uniform(params.footprint_min_m, params.footprint_max_m)
            d = rng.uniform(params.footprint_min_m, params.footprint_max_m)
            x0 = -half + i * cell + CELL_MARGIN_M + rng.uniform(0.0, usable - w)
            y0 = -half + j * cell + CELL_MARGIN_M + rng.uniform(0.0, usable - d)
            h = float(
                np.clip(
                    rng.lognormal(params.height_mu_log, params.height_sigma_log),
                    MIN_BUILDING_HEIGHT_M,
                    MAX_BUILDING_HEIGHT_M,
                )
            )
            mat = material_names[int(rng.integers(0, 3))]
            footprint = (
                (x0, y0),
                (x0 + w, y0),
                (x0 + w, y0 + d),
                (x0, y0 + d),
            )
            buildings.append(Building(len(buildings), footprint, h, mat))
    return Scene(
        bounds=(-half, -half, half, half),
        ground_material="concrete",
        buildings=tuple(buildings),
        geo_origin=None,
        seed=seed,
        materials=dict(DEFAULT_MATERIALS),
    )


# ---------------------------------------------------------------------------
# GeoJSON ingestion


def import_footprints(doc) -> Scene:
    """Build a scene from a GeoJSON FeatureCollection of Polygon footprints.

    Coordinates are projected to local meters with an equirectangular
    projection about the collection centroid. Heights come from a ``height``
    property (meters), else ``levels`` * 3 m, else 10 m. Features whose
    bounding box lies entirely outside the default scene square are dropped;
    the bounds are expanded to cover whatever is kept. Interior rings
    (courtyards) are ignored.
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SceneError(f"malformed GeoJSON document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise SceneError("document is not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise SceneError("FeatureCollection has no feature list")

    rings = []
    for fi, feat in enumerate(features):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise SceneError(
                f"feature {fi}: non-polygon geometry {geom.get('type')!r}"
            )
        coords = geom.get("coordinates") or []
        if not coords:
            raise SceneError(f"feature {fi}: polygon has no rings")
        exterior = [(float(lon), float(lat)) for lon, lat in coords[0]]
        if len(exterior) > 1 and exterior[0] == exterior[-1]:
            exterior = exterior[:-1]
        if len(set(exterior)) < 3:
            raise SceneError(f"feature {fi}: degenerate polygon (< 3 distinct vertices)")
        rings.append((fi, exterior, (feat.get("properties") or {})))

    if not rings:
        return Scene(geo_origin=None, seed=0)

    all_pts = [pt for _, ring, _ in rings for pt in ring]
    lon0 = sum(p[0] for p in all_pts) / len(all_pts)
    lat0 = sum(p[1] for p in all_pts) / len(all_pts)
    cos_lat0 = math.cos(math.radians(lat0))

    def project(lon, lat):
        x = EARTH_RADIUS_M * math.radians(lon - lon0) * cos_lat0
        y = EARTH_RADIUS_M * math.radians(lat - lat0)
        return (x, y)

    bounds = list(Scene().bounds)
    buildings = []
    for fi, ring, props in rings:
        poly = [project(lon, lat) for lon, lat in ring]
        if signed_area(poly) < 0.0:
            poly = poly[::-1]
        if signed_area(poly) == 0.0:
            raise SceneError(f"feature {fi}: degenerate polygon (zero area)")
        xs = [p[0] for p in poly]
        ys = [p[1] for p in poly]
        if (
            max(xs) < bounds[0]
            or min(xs) > bounds[2]
            or max(ys) < bounds[1]
            or min(ys) > bounds[3]
        ):
            continue
        height = props.get("height")
        if height is None:
            levels = props.get("levels")
            if levels is not None:
                height = float(levels) * DEFAULT_LEVEL_HEIGHT_M
            else:
                height = DEFAULT_IMPORT_HEIGHT_M
        material = props.get("material", "concrete")
        if material not in DEFAULT_MATERIALS:
            raise SceneError(f"feature {fi}: unknown material {material!r}")
        buildings.append(
            Building(len(buildings), tuple(poly), float(height), material)
        )
        bounds[0] = min(bounds[0], min(xs))
        bounds[1] = min(bounds[1], min(ys))
        bounds[2] = max(bounds[2], max(xs))
        bounds[3] = max(bounds[3], max(ys))

    scene = Scene(
        bounds=tuple(bounds),
        buildings=tuple(buildings),
        geo_origin=(lat0, lon0),
        seed=0,
        materials=dict(DEFAULT_MATERIALS),
    )
    problems = validate_scene(scene)
    if problems:
        raise SceneError("; ".join(problems))
    return scene


# ---------------------------------------------------------------------------
# meshing


@dataclass(frozen=True, eq=False)
class Triangle:
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    face_id: int
    material: str
    kind: str


@dataclass(frozen=True, eq=False)
class Facet:
    """One planar reflector: a wall rectangle, a roof polygon, or the ground."""

    face_id: int
    vertices: np.ndarray  # (m, 3), CCW seen from the outward normal side
    normal: np.ndarray  # unit outward normal
    material: str
    kind: str
    building_id: int | None


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    triangles: tuple[Triangle, ...]
    facets: tuple[Facet, ...]


def _facet_from_poly(face_id, verts3d, normal, material, kind, building_id):
    return Facet(
        face_id=face_id,
        vertices=np.asarray(verts3d, dtype=float),
        normal=np.asarray(normal, dtype=float),
        material=material,
        kind=kind,
        building_id=building_id,
    )


def triangulate(scene: Scene) -> TriangleMesh:
    """Extrude the scene into triangles grouped by planar facet.

    Every footprint edge becomes one wall facet (two triangles), every roof
    is ear-clipped at the building height, and the ground plane covers the
    scene bounds with two triangles. Wall normals point away from the
    building interior, roof and ground normals point up.
    """
    triangles: list[Triangle] = []
    facets: list[Facet] = []

    def add_facet(verts3d, normal, material, kind, building_id, tri_indices):
        fid = len(facets)
        facets.append(_facet_from_poly(fid, verts3d, normal, material, kind, building_id))
        verts = facets[-1].vertices
        for a, b, c in tri_indices:
            triangles.append(Triangle(verts[a], verts[b], verts[c], fid, material, kind))

    xmin, ymin, xmax, ymax = scene.bounds
    ground = [(xmin, ymin, 0.0), (xmax, ymin, 0.0), (xmax, ymax, 0.0), (xmin, ymax, 0.0)]
    add_facet(ground, (0.0, 0.0, 1.0), scene.ground_material, KIND_GROUND, None,
              [(0, 1, 2), (0, 2, 3)])

    for b in scene.buildings:
        if not is_simple_polygon(b.footprint):
            raise SceneError(f"building {b.id}: footprint is not a simple polygon")
        n = len(b.footprint)
        h = b.height_m
        for e in range(n):
            ax, ay = b.footprint[e]
            bx, by = b.footprint[(e + 1) % n]
            dx, dy = bx - ax, by - ay
            length = math.hypot(dx, dy)
            if length == 0.0:
                raise SceneError(f"building {b.id}: zero-length footprint edge")
            # CCW footprint: the outward side is to the right of the edge direction.
            normal = (dy / length, -dx / length, 0.0)
            quad = [(ax, ay, 0.0), (bx, by, 0.0), (bx, by, h), (ax, ay, h)]
            add_facet(quad, normal, b.material, KIND_WALL, b.id,
                      [(0, 1, 2), (0, 2, 3)])
        roof3d = [(x, y, h) for x, y in b.footprint]
        try:
            roof_tris = ear_clip(b.footprint)
        except SceneError as exc:
            raise SceneError(f"building {b.id}: {exc}") from exc
        add_facet(roof3d, (0.0, 0.0, 1.0), b.material, KIND_ROOF, b.id, roof_tris)

    return TriangleMesh(tuple(triangles), tuple(facets))


# ---------------------------------------------------------------------------
# scene I/O


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_scene(scene: Scene, out_dir) -> None:
    """Write ``scene.xml`` plus ``mesh/ground.ply`` and ``mesh/building_<i>.ply``."""
    out = Path(out_dir)
    (out / "mesh").mkdir(parents=True, exist_ok=True)

    lines = ['<?xml version="1.0" encoding="utf-8"?>']
    lines.append(f'<scene version="{SCENE_SCHEMA_VERSION}" seed="{scene.seed}">')
    xmin, ymin, xmax, ymax = scene.bounds
    lines.append(
        f'  <bounds xmin="{_fmt(xmin)}" ymin="{_fmt(ymin)}"'
        f' xmax="{_fmt(xmax)}" ymax="{_fmt(ymax)}"/>'
    )
    for name in sorted(scene.materials):
        m = scene.materials[name]
        lines.append(
            f'  <material name="{name}" eps_r="{_fmt(m.eps_r)}"'
            f' conductivity="{_fmt(m.conductivity_s_per_m)}"'
            f' scattering="{_fmt(m.scattering_coeff)}"/>'
        )
    lines.append(f'  <ground material="{scene.ground_material}"/>')
    if scene.geo_origin is not None:
        lat, lon = scene.geo_origin
        lines.append(f'  <geo_origin lat="{_fmt(lat)}" lon="{_fmt(lon)}"/>')
    for b in scene.buildings:
        lines.append(
            f'  <building id="{b.id}" height="{_fmt(b.height_m)}" material="{b.material}">'
        )
        for x, y in b.footprint:
            lines.append(f'    <v x="{_fmt(x)}" y="{_fmt(y)}"/>')
        lines.append("  </building>")
    lines.append("</scene>")
    (out / "scene.xml").write_text("\n".join(lines) + "\n", encoding="utf-8")

    _write_ply(
        out / "mesh" / "ground.ply",
        [(xmin, ymin, 0.0), (xmax, ymin, 0.0), (xmax, ymax, 0.0), (xmin, ymax, 0.0)],
        [(0, 1, 2), (0, 2, 3)],
    )
    for i, b in enumerate(scene.buildings):
        n = len(b.footprint)
        verts = [(x, y, 0.0) for x, y in b.footprint]
        verts += [(x, y, b.height_m) for x, y in b.footprint]
        faces = []
        for e in range(n):
            a, bb = e, (e + 1) % n
            faces.append((a, bb, n + bb))
            faces.append((a, n + bb, n + a))
        for ta, tb, tc in ear_clip(b.footprint):
            faces.append((n + ta, n + tb, n + tc))
        _write_ply(out / "mesh" / f"building_{i}.ply", verts, faces)


def _write_ply(path, verts, faces) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(verts)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for x, y, z in verts:
        lines.append(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}")
    for a, b, c in faces:
        lines.append(f"3 {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_attr(el, name):
    value = el.get(name)
    if value is None:
        raise SceneError(f"scene.xml: <{el.tag}> missing attribute {name!r}")
    return value


def import_scene(scene_dir) -> Scene:
    """Read ``scene.xml`` back into a Scene; exact inverse of export_scene."""
    path = Path(scene_dir) / "scene.xml"
    if not path.is_file():
        raise SceneError(f"no scene.xml under {scene_dir}")
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise SceneError(f"scene.xml: parse error: {exc}") from exc
    if root.tag != "scene":
        raise SceneError("scene.xml: root element must be <scene>")
    version = _require_attr(root, "version")
    if version != SCENE_SCHEMA_VERSION:
        raise SceneError(f"scene.xml: unsupported version {version!r}")
    seed = int(_require_attr(root, "seed"))

    bounds_el = root.find("bounds")
    if bounds_el is None:
        raise SceneError("scene.xml: missing <bounds>")
    bounds = tuple(float(_require_attr(bounds_el, k)) for k in ("xmin", "ymin", "xmax", "ymax"))

    materials = {}
    for mat in root.findall("material"):
        name = _require_attr(mat, "name")
        materials[name] = MaterialParams(
            name=name,
            eps_r=float(_require_attr(mat, "eps_r")),
            conductivity_s_per_m=float(_require_attr(mat, "conductivity")),
            scattering_coeff=float(_require_attr(mat, "scattering")),
        )
    if not materials:
        raise SceneError("scene.xml: no <material> entries")

    ground_el = root.find("ground")
    if ground_el is None:
        raise SceneError("scene.xml: missing <ground>")
    ground_material = _require_attr(ground_el, "material")

    geo_origin = None
    geo_el = root.find("geo_origin")
    if geo_el is not None:
        geo_origin = (float(_require_attr(geo_el, "lat")), float(_require_attr(geo_el, "lon")))

    buildings = []
    for bel in root.findall("building"):
        footprint = tuple(
            (float(_require_attr(v, "x")), float(_require_attr(v, "y")))
            for v in bel.findall("v")
        )
        buildings.append(
            Building(
                id=int(_require_attr(bel, "id")),
                footprint=footprint,
                height_m=float(_require_attr(bel, "height")),
                material=_require_attr(bel, "material"),
            )
        )

    scene = Scene(
        bounds=bounds,
        ground_material=ground_material,
        buildings=tuple(buildings),
        geo_origin=geo_origin,
        seed=seed,
        materials=materials,
    )
    problems = validate_scene(scene)
    if problems:
        raise SceneError("scene.xml: " + "; ".join(problems))
    return scene
