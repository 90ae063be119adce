"""Continual-learning engine and benchmark harness for windowed time-series classification."""

from ._kernels import BACKEND
from .costs import LatencyProfile, profile, storage_bytes
from .data import (Dataset, ScenarioData, SynthSpec, TaskSplit, build_scenario, load_dataset, make_scenario,
                   prepare_scenario, save_dataset, synth_generate)
from .memory import ExemplarStore, herd_select, ncm_classify
from .model import Model, ModelConfig, expand_head, forward, load_model, save_model
from .protocol import (AccuracyMatrix, Grid, RunSpec, algorithm1_search, evaluate, joint_baseline, metric_A,
                       metric_F, metric_I, train_one_task, weighted_f1)
from .strategies import make_strategy

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix", "BACKEND", "Dataset", "ExemplarStore", "Grid", "LatencyProfile", "Model", "ModelConfig",
    "RunSpec", "ScenarioData", "SynthSpec", "TaskSplit", "algorithm1_search", "build_scenario", "evaluate",
    "expand_head", "forward", "herd_select", "joint_baseline", "load_dataset", "load_model", "make_scenario",
    "make_strategy", "metric_A", "metric_F", "metric_I", "ncm_classify", "prepare_scenario", "profile",
    "save_dataset", "save_model", "storage_bytes", "synth_generate", "train_one_task", "weighted_f1",
]
