from pathlib import Path

import numpy as np
import pytest
import yaml

from teleop.cli import EXIT_OK, run
from teleop.config import PipelineConfig, load_pipeline_config
from teleop.kinematics import HumanSkeleton, load_humanoid
from teleop.motiondata import MotionDataset, synth_motion
from teleop.retarget import RetargetedMotion

DATA_DIR = Path(__file__).parent / "data"
REPO_ROOT = Path(__file__).parent.parent
DEFAULT_CONFIG = REPO_ROOT / "config" / "default.yaml"


@pytest.fixture(scope="session")
def model():
    """Default humanoid model from config/humanoid.yaml"""
    return load_humanoid()


@pytest.fixture(scope="session")
def skeleton():
    """Default human keypoint skeleton"""
    return HumanSkeleton.default()


@pytest.fixture
def pipeline_config():
    """Pipeline config with a tiny training budget"""
    return PipelineConfig(
        train={
            "num_envs": 2, "horizon": 4, "iterations": 2, "epochs": 2, "minibatch_size": 4,
            "hidden_sizes": [16, 16], "eval_interval": 0, "checkpoint_interval": 0,
        },
        filter={"trials_per_seq": 1},
    )


@pytest.fixture
def config_file(tmp_path, pipeline_config):
    """The tiny pipeline config written as YAML"""
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(pipeline_config.model_dump(mode="json")))
    return path


@pytest.fixture
def standing_motion(model):
    """Two seconds of the humanoid standing still at 50 Hz"""
    n = 100
    root_pos = np.tile([0.0, 0.0, model.nominal_root_height], (n, 1))
    root_rot = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))
    q = np.tile(model.default_q, (n, 1))
    return RetargetedMotion.from_arrays(model, 50.0, "stand_ref", root_pos, root_rot, q)


@pytest.fixture
def stand_sequence():
    """One second of the synthetic stand motion at 30 Hz"""
    return synth_motion("stand", 1.0, 30.0, 0)


@pytest.fixture
def shipped_config():
    """The pipeline config in config/default.yaml, with its full training budget"""
    return load_pipeline_config(str(DEFAULT_CONFIG))


@pytest.fixture
def build_suite(tmp_path):
    """Synthesizes and retargets a named suite with the shipped config, keeping every sequence"""
    def build(suite: str, name: str = "suite") -> MotionDataset:
        root = tmp_path / name
        cfg = ["--config", str(DEFAULT_CONFIG), "--seed", "0", "--threads", "1"]
        assert run(["synth", *cfg, "--suite", suite, "--out", str(root / "raw")]) == EXIT_OK
        assert run(["fit-shape", *cfg, "--out", str(root / "shape.json")]) == EXIT_OK
        assert run(["retarget", *cfg, "--in", str(root / "raw"), "--out", str(root / "retargeted"),
                    "--shape", str(root / "shape.json"), "--no-heuristics"]) == EXIT_OK
        return MotionDataset.load(root / "retargeted")
    return build
