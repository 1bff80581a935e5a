"""Perception-reflection agent loop for long-video question answering.

The most common entry points are re-exported here. Submodules hold the rest.
"""

from cogniloop.agents import Decision, SessionResult, run_session
from cogniloop.config import SessionConfig, build_suite, load_config
from cogniloop.errors import CogniloopError
from cogniloop.gateway import BackendSuite
from cogniloop.harness import Report, Sample, build_report, frames_metric, load_dataset, run_benchmark
from cogniloop.kernels import (
    build_profile,
    cosine_similarity,
    kmeans,
    segment_watershed,
    select_peak_representatives,
    select_topk,
    select_uniform,
    smooth_scores,
)
from cogniloop.media import FrameIndexTable, FrameRef, index_video
from cogniloop.memory import WorkingMemory
from cogniloop.mock import MockScript, mock_suite
from cogniloop.trace import SessionTrace, TraceEvent

__version__ = "0.1.0"

__all__ = [
    "BackendSuite",
    "CogniloopError",
    "Decision",
    "FrameIndexTable",
    "FrameRef",
    "MockScript",
    "Report",
    "Sample",
    "SessionConfig",
    "SessionResult",
    "SessionTrace",
    "TraceEvent",
    "WorkingMemory",
    "build_profile",
    "build_report",
    "build_suite",
    "cosine_similarity",
    "frames_metric",
    "index_video",
    "kmeans",
    "load_config",
    "load_dataset",
    "mock_suite",
    "run_benchmark",
    "run_session",
    "segment_watershed",
    "select_peak_representatives",
    "select_topk",
    "select_uniform",
    "smooth_scores",
]
