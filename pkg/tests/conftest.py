import numpy as np
import pytest

from trifuse.synth import SceneSpec, build_sequence
from trifuse.triplane import RenderConfig, Triplane

TINY_RENDER = RenderConfig(width=20, height=20, samples=24).to_dict()


def tiny_spec(**kw) -> SceneSpec:
    base = dict(seed=3, frames=2, views=3, resolution=32, channels=4, render=TINY_RENDER,
                vis_resolution=16, vis_column_samples=8, vis_ray_samples=8)
    base.update(kw)
    return SceneSpec(**base)


@pytest.fixture(scope="session")
def tiny_bundle(tmp_path_factory):
    return build_sequence(tiny_spec(), tmp_path_factory.mktemp("tiny") / "bundle")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_triplane(rng, channels=4, height=8, width=8, scale=1.0) -> Triplane:
    return Triplane((rng.standard_normal((3, channels, height, width)) * scale).astype(np.float32))
