"""Shared fixtures: the trained model bundle (disk-cached) and labeled sets.

The full training pipeline takes a minute or two, so the bundle is built once
with the default seed and persisted under tests/.cache/bundle; later sessions
load it back through the same manifest-verified path users go through.
"""
import os

import pytest
import yaml

from safefleet import data, pipeline
from safefleet.world import make_platform

CACHE_DIR = os.path.join(os.path.dirname(__file__), ".cache")
BUNDLE_DIR = os.path.join(CACHE_DIR, "bundle")
PIPELINE_SEED = 0


@pytest.fixture(scope="session")
def bundle_and_report():
    manifest = os.path.join(BUNDLE_DIR, "manifest.yaml")
    if not os.path.exists(manifest):
        cfg = pipeline.PipelineConfig(seed=PIPELINE_SEED)
        bundle, report = pipeline.build_models(cfg)
        pipeline.save_bundle(bundle, BUNDLE_DIR, report=report)
    bundle = pipeline.load_bundle(BUNDLE_DIR)
    with open(manifest) as fh:
        report = yaml.safe_load(fh)["training_report"]
    return bundle, report


@pytest.fixture(scope="session")
def bundle(bundle_and_report):
    return bundle_and_report[0]


@pytest.fixture(scope="session")
def training_report(bundle_and_report):
    return bundle_and_report[1]


@pytest.fixture(scope="session")
def task_samples():
    """The pipeline's labeled training sets, regenerated with its seeds."""
    trajs = {}
    for i, name in enumerate(["freight", "jackal"]):
        platform = make_platform(name, 1.5)
        trajs[name] = data.generate_robot_trajectories(
            platform, 600.0, seed=PIPELINE_SEED + 11 * (i + 1))
    peds = data.generate_pedestrian_tracks(2, 1800.0, (0.3, 1.2),
                                           seed=PIPELINE_SEED + 101)
    out = {
        "static": data.build_static_dataset(
            trajs["freight"], data.TASK_LABELING["static"],
            seed=PIPELINE_SEED + 201, clones_per_traj=8),
        "dynamic": data.build_dynamic_dataset(
            trajs["freight"], peds, data.TASK_LABELING["dynamic"],
            seed=PIPELINE_SEED + 202, pairs_per_traj=8),
        "multirobot": data.build_multirobot_dataset(
            trajs["freight"] + trajs["jackal"], data.TASK_LABELING["multirobot"],
            seed=PIPELINE_SEED + 203, pairs=220),
    }
    return out
