import hypothesis
import numpy as np
import pytest

from rfpath import ProcGenParams, build_bvh, generate_procedural_scene, triangulate

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow],
)
hypothesis.settings.load_profile("default")


@pytest.fixture
def ground_scene():
    from rfpath import Scene

    return Scene(buildings=())


def make_mesh_bvh(scene):
    mesh = triangulate(scene)
    return mesh, build_bvh(mesh)


def small_city(seed=3, buildings_probability=0.4, block_grid=4):
    return generate_procedural_scene(
        ProcGenParams(block_grid=block_grid, building_probability=buildings_probability),
        seed,
    )


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
