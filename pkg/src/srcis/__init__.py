"""Desk-scale complementary continual-learning engine and benchmark harness."""
from .backbone import Backbone, LowRankAdapter, backbone_init, compose, forward
from .detector import DetectorConfig, OnlineExperience
from .harness import AccuracyMatrix, RunConfig, metrics, predict, run
from .memory import MemoryStore, PrototypeEntry, ScenarioRecord
from .stream import TaskStream, gen_stream

__version__ = "0.1.0"
