import numpy as np
import pytest

from teleopforge.demostore import write_demo
from teleopforge.learn.scripted import scripted_demonstrator
from teleopforge.simcore import ArmConfig, TaskSpec


@pytest.fixture(scope="session")
def arm_config():
    return ArmConfig.default()


@pytest.fixture(scope="session")
def lifting_task():
    return TaskSpec.load("lifting")


@pytest.fixture(scope="session")
def lifting_demos(arm_config, lifting_task):
    """Five successful scripted lifting demos, generated once per session."""
    demos = []
    seed = 0
    while len(demos) < 5:
        rec = scripted_demonstrator(lifting_task, 0.005, seed=seed, config=arm_config)
        seed += 1
        if rec.success:
            demos.append(rec)
    return demos


@pytest.fixture(scope="session")
def lifting_dataset_dir(tmp_path_factory, lifting_demos):
    d = tmp_path_factory.mktemp("demos")
    for rec in lifting_demos:
        write_demo(rec, d)
    return d
