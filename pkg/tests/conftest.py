import pytest

from densegaze import OracleDetector, PipelineConfig, run_pipeline
from densegaze.synth import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def default_scene():
    """The stock synthetic scene: 500 objects, ~5% coverage, 100x size span."""
    return generate_scene(SceneSpec())


@pytest.fixture(scope="session")
def small_scene():
    """A quick scene for tests that only need plausible clustered input."""
    spec = SceneSpec(object_count=120, seed=7)
    return generate_scene(spec)


@pytest.fixture(scope="session")
def crowd_scene():
    """Crowd-only scene: every object fits a tiny-grid window."""
    spec = SceneSpec(
        object_count=300,
        foreground_fraction_target=0.02,
        size_gradient=(32.0, 300.0),
        seed=3,
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def default_run(default_scene):
    """Oracle pipeline run over the stock scene with stock config."""
    annotations, extent = default_scene
    config = PipelineConfig()
    return run_pipeline(annotations, extent, config, OracleDetector(annotations))
