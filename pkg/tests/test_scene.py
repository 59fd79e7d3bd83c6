import json
import math
from collections import Counter

import numpy as np
import pytest

from rfpath import (
    Building,
    ProcGenParams,
    Scene,
    SceneError,
    export_scene,
    generate_procedural_scene,
    import_footprints,
    import_scene,
    triangulate,
)
from rfpath.scene import signed_area

L_SHAPE = ((0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (2.0, 2.0), (2.0, 4.0), (0.0, 4.0))


# -- procedural generation ---------------------------------------------------


def test_zero_probability_yields_empty_scene():
    scene = generate_procedural_scene(ProcGenParams(building_probability=0.0), 1)
    assert scene.buildings == ()


def test_same_seed_reproduces_scene_exactly():
    params = ProcGenParams()
    assert generate_procedural_scene(params, 42) == generate_procedural_scene(params, 42)


def test_different_seeds_differ():
    params = ProcGenParams()
    assert generate_procedural_scene(params, 1) != generate_procedural_scene(params, 2)


def test_procedural_respects_margins_and_height_clip():
    params = ProcGenParams(block_grid=8, building_probability=1.0)
    scene = generate_procedural_scene(params, 9)
    assert len(scene.buildings) == 64
    cell = params.bounds_m / params.block_grid
    for b in scene.buildings:
        assert 3.0 <= b.height_m <= 100.0
        xs = [v[0] for v in b.footprint]
        ys = [v[1] for v in b.footprint]
        # margins >= 2 m to the owning cell's border
        i = int((min(xs) + 64.0) // cell)
        j = int((min(ys) + 64.0) // cell)
        assert min(xs) >= -64.0 + i * cell + 2.0 - 1e-9
        assert max(xs) <= -64.0 + (i + 1) * cell - 2.0 + 1e-9
        assert min(ys) >= -64.0 + j * cell + 2.0 - 1e-9
        assert max(ys) <= -64.0 + (j + 1) * cell - 2.0 + 1e-9
        assert b.material in {"concrete", "glass", "metal"}


def test_infeasible_footprint_range_raises():
    with pytest.raises(SceneError, match="footprint"):
        generate_procedural_scene(
            ProcGenParams(block_grid=8, footprint_max_m=13.0), 0
        )


# -- GeoJSON ingestion --------------------------------------------------------


def _feature(coords, **props):
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {"type": "Polygon", "coordinates": [coords]},
    }


def _collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def _square(lon, lat, half_deg):
    return [
        [lon - half_deg, lat - half_deg],
        [lon + half_deg, lat - half_deg],
        [lon + half_deg, lat + half_deg],
        [lon - half_deg, lat + half_deg],
        [lon - half_deg, lat - half_deg],
    ]


def test_single_footprint_identity_ingestion():
    doc = _collection(_feature(_square(0.0, 51.0, 0.0001), height=20))
    scene = import_footprints(json.dumps(doc))
    assert len(scene.buildings) == 1
    assert scene.buildings[0].height_m == 20
    assert scene.geo_origin is not None
    # centroid sits at the local origin
    xs = [v[0] for v in scene.buildings[0].footprint]
    assert abs(sum(xs)) < 1e-6


def test_levels_to_height_rule():
    doc = _collection(_feature(_square(0.0, 51.0, 0.0001), levels=4))
    scene = import_footprints(doc)
    assert scene.buildings[0].height_m == pytest.approx(12.0)


def test_feature_without_height_gets_default():
    doc = _collection(_feature(_square(0.0, 51.0, 0.0001)))
    scene = import_footprints(doc)
    assert scene.buildings[0].height_m == 10.0


def test_far_feature_is_dropped():
    # about 11 km north of the centroid pair, far outside the 128 m block
    near = _feature(_square(0.0, 51.0, 0.0001), height=10)
    far = _feature(_square(0.0, 51.1, 0.0001), height=10)
    scene = import_footprints(_collection(near, far))
    # the centroid lands between the two squares, so both end up far away;
    # the far one must be gone regardless
    assert len(scene.buildings) <= 1


def test_far_feature_dropped_near_cluster_kept():
    # 39 near squares dominate the centroid; the one ~1.1 km away must be
    # dropped while the cluster survives the bounding-box test
    near = [_feature(_square(0.0, 51.0, 0.0001), height=10) for _ in range(39)]
    far = _feature(_square(0.0, 51.01, 0.0001), height=10)
    scene = import_footprints(_collection(*near, far))
    assert len(scene.buildings) == 39


def test_non_polygon_geometry_rejected():
    doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {},
                "geometry": {"type": "Point", "coordinates": [0, 51]},
            }
        ],
    }
    with pytest.raises(SceneError, match="non-polygon"):
        import_footprints(doc)


def test_degenerate_polygon_rejected():
    doc = _collection(
        _feature([[0.0, 51.0], [0.0001, 51.0], [0.0, 51.0], [0.0001, 51.0]])
    )
    with pytest.raises(SceneError, match="degenerate"):
        import_footprints(doc)


def test_malformed_json_rejected():
    with pytest.raises(SceneError, match="malformed"):
        import_footprints("{not json")


def test_cw_exterior_ring_is_reoriented():
    coords = _square(0.0, 51.0, 0.0001)
    doc = _collection(_feature(list(reversed(coords)), height=5))
    scene = import_footprints(doc)
    assert signed_area(scene.buildings[0].footprint) > 0


# -- triangulation -------------------------------------------------------------


def test_rectangle_triangle_count():
    b = Building(0, ((0.0, 0.0), (10.0, 0.0), (10.0, 8.0), (0.0, 8.0)), 20.0, "concrete")
    mesh = triangulate(Scene(buildings=(b,)))
    counts = Counter(t.kind for t in mesh.triangles)
    assert counts == {"wall": 8, "roof": 2, "ground": 2}
    assert len(mesh.triangles) == 12


def test_empty_scene_is_ground_only():
    mesh = triangulate(Scene(buildings=()))
    assert len(mesh.triangles) == 2
    assert all(t.kind == "ground" for t in mesh.triangles)


def test_l_shape_triangle_count():
    b = Building(0, L_SHAPE, 9.0, "glass")
    mesh = triangulate(Scene(buildings=(b,)))
    counts = Counter(t.kind for t in mesh.triangles)
    assert counts == {"wall": 12, "roof": 4, "ground": 2}
    assert len(mesh.triangles) == 18


def _triangle_area(t):
    return 0.5 * np.linalg.norm(np.cross(t.v1 - t.v0, t.v2 - t.v0))


@pytest.mark.parametrize("footprint", [L_SHAPE, ((0.0, 0.0), (6.0, 0.0), (6.0, 4.0), (0.0, 4.0))])
def test_roof_area_matches_footprint(footprint):
    b = Building(0, footprint, 5.0, "concrete")
    mesh = triangulate(Scene(buildings=(b,)))
    roof_area = sum(_triangle_area(t) for t in mesh.triangles if t.kind == "roof")
    assert roof_area == pytest.approx(abs(signed_area(footprint)), rel=1e-9)


def test_roof_area_matches_for_random_scenes():
    for seed in range(5):
        scene = generate_procedural_scene(ProcGenParams(building_probability=0.6), seed)
        mesh = triangulate(scene)
        per_building = {}
        for t in mesh.triangles:
            if t.kind == "roof":
                per_building.setdefault(t.face_id, 0.0)
                per_building[t.face_id] += _triangle_area(t)
        roofs = {f.face_id: f for f in mesh.facets if f.kind == "roof"}
        for fid, area in per_building.items():
            footprint = [(v[0], v[1]) for v in roofs[fid].vertices]
            assert area == pytest.approx(signed_area(footprint), rel=1e-9)


def _closedness_audit(mesh):
    """Walls+roof of each building must close, with the open rim at z = 0."""
    per_building = {}
    for t in mesh.triangles:
        if t.kind == "ground":
            continue
        fac = mesh.facets[t.face_id]
        per_building.setdefault(fac.building_id, []).append(t)
    for bid, tris in per_building.items():
        edges = Counter()
        for t in tris:
            for a, b in ((t.v0, t.v1), (t.v1, t.v2), (t.v2, t.v0)):
                key = tuple(sorted((tuple(a), tuple(b))))
                edges[key] += 1
        for (a, b), count in edges.items():
            if a[2] == 0.0 and b[2] == 0.0:
                assert count == 1, f"building {bid}: rim edge shared {count} times"
            else:
                assert count == 2, f"building {bid}: edge {a}-{b} shared {count} times"


def _area_centroid(poly):
    a = cx = cy = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        w = x0 * y1 - x1 * y0
        a += w
        cx += (x0 + x1) * w
        cy += (y0 + y1) * w
    a *= 0.5
    return np.array([cx / (6.0 * a), cy / (6.0 * a), 0.0])


def _normal_audit(mesh, scene):
    centroids = {b.id: _area_centroid(b.footprint) for b in scene.buildings}
    for t in mesh.triangles:
        n = np.cross(t.v1 - t.v0, t.v2 - t.v0)
        n = n / np.linalg.norm(n)
        if t.kind == "ground":
            assert np.allclose(n, [0, 0, 1])
        elif t.kind == "roof":
            assert n[2] > 0.99
        else:
            fac = mesh.facets[t.face_id]
            outward = (t.v0 + t.v1 + t.v2) / 3.0 - centroids[fac.building_id]
            outward[2] = 0.0
            assert float(n @ outward) > 0.0


def test_mesh_invariants_on_generated_and_constructed_scenes():
    scenes = [
        Scene(buildings=(Building(0, L_SHAPE, 7.0, "concrete"),)),
        generate_procedural_scene(ProcGenParams(building_probability=0.5), 11),
    ]
    for scene in scenes:
        mesh = triangulate(scene)
        _closedness_audit(mesh)
        _normal_audit(mesh, scene)


def test_triangulate_rejects_self_intersecting_footprint():
    bowtie = ((0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0))
    scene = Scene(buildings=(Building(3, bowtie, 5.0, "concrete"),))
    with pytest.raises(SceneError, match="building 3"):
        triangulate(scene)


# -- scene I/O -----------------------------------------------------------------


def test_export_import_round_trip_many_scenes(tmp_path):
    for seed in range(100):
        scene = generate_procedural_scene(ProcGenParams(building_probability=0.4), seed)
        target = tmp_path / f"s{seed}"
        export_scene(scene, target)
        assert import_scene(target) == scene


def test_export_is_byte_deterministic(tmp_path):
    scene = generate_procedural_scene(ProcGenParams(), 5)
    export_scene(scene, tmp_path / "a")
    export_scene(scene, tmp_path / "b")
    assert (tmp_path / "a" / "scene.xml").read_bytes() == (tmp_path / "b" / "scene.xml").read_bytes()


def test_export_layout(tmp_path):
    scene = Scene(buildings=())
    export_scene(scene, tmp_path)
    assert (tmp_path / "scene.xml").is_file()
    assert (tmp_path / "mesh" / "ground.ply").is_file()
    assert not list((tmp_path / "mesh").glob("building_*.ply"))

    two = Scene(
        buildings=(
            Building(0, ((0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)), 5.0, "glass"),
            Building(1, ((10.0, 0.0), (14.0, 0.0), (14.0, 4.0), (10.0, 4.0)), 5.0, "metal"),
        )
    )
    export_scene(two, tmp_path / "two")
    names = sorted(p.name for p in (tmp_path / "two" / "mesh").iterdir())
    assert names == ["building_0.ply", "building_1.ply", "ground.ply"]


def test_ply_is_valid_ascii(tmp_path):
    b = Building(0, L_SHAPE, 7.0, "concrete")
    export_scene(Scene(buildings=(b,)), tmp_path)
    text = (tmp_path / "mesh" / "building_0.ply").read_text().splitlines()
    assert text[0] == "ply"
    assert text[1] == "format ascii 1.0"
    n_verts = int(text[2].split()[-1])
    assert n_verts == 2 * len(L_SHAPE)
    header_end = text.index("end_header")
    n_faces = int(text[header_end - 2].split()[-1])
    faces = text[header_end + 1 + n_verts:]
    assert len(faces) == n_faces
    for line in faces:
        parts = line.split()
        assert parts[0] == "3"
        assert all(0 <= int(i) < n_verts for i in parts[1:])


def test_unknown_version_rejected(tmp_path):
    export_scene(Scene(buildings=()), tmp_path)
    xml = (tmp_path / "scene.xml").read_text().replace('version="1.0"', 'version="9.9"')
    (tmp_path / "scene.xml").write_text(xml)
    with pytest.raises(SceneError, match="version"):
        import_scene(tmp_path)


def test_undefined_material_reference_rejected(tmp_path):
    scene = Scene(
        buildings=(Building(0, ((0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)), 5.0, "concrete"),)
    )
    export_scene(scene, tmp_path)
    xml = (tmp_path / "scene.xml").read_text().replace('material="concrete">', 'material="brick">')
    (tmp_path / "scene.xml").write_text(xml)
    with pytest.raises(SceneError, match="brick"):
        import_scene(tmp_path)


def test_missing_scene_xml(tmp_path):
    with pytest.raises(SceneError, match="scene.xml"):
        import_scene(tmp_path)


def test_geo_scene_round_trip(tmp_path):
    doc = _collection(_feature(_square(0.0, 51.0, 0.0001), height=20))
    scene = import_footprints(doc)
    export_scene(scene, tmp_path)
    assert import_scene(tmp_path) == scene
