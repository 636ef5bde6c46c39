"""Two-stage difficulty/redundancy dataset pipeline and reasoning-trace
evaluation harness for long-reasoning models."""

__version__ = "0.1.0"

from .answers import ExtractedAnswer, extract_final_answer, is_correct
from .config import Config, load_config
from .corpus import Problem, ProblemSet, assign_difficulty, ingest_dataset
from .evaluation import EvalReport, evaluate_run
from .gateway import Gateway, GenerationRequest, GenerationResult, MockTransport
from .stage1 import SftDataset, SftSample, build_pools, build_stage1_dataset, overlap_ratio
from .stage2 import DeterminatorVerdict, compose_stage2, judge_chunk
from .traces import Chunk, HypnosisTag, Trace, chunk_thoughts, detect_terminal_loop, parse_trace

__all__ = [
    "Chunk",
    "Config",
    "DeterminatorVerdict",
    "EvalReport",
    "ExtractedAnswer",
    "Gateway",
    "GenerationRequest",
    "GenerationResult",
    "HypnosisTag",
    "MockTransport",
    "Problem",
    "ProblemSet",
    "SftDataset",
    "SftSample",
    "Trace",
    "assign_difficulty",
    "build_pools",
    "build_stage1_dataset",
    "chunk_thoughts",
    "compose_stage2",
    "detect_terminal_loop",
    "evaluate_run",
    "extract_final_answer",
    "ingest_dataset",
    "is_correct",
    "judge_chunk",
    "load_config",
    "overlap_ratio",
    "parse_trace",
]
