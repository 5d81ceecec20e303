"""Synthetic branch generation, loss-driven point-cloud completion, branch
trait characterization and pruning planning."""
from . import characterize, completion, io, losses, nn, pipeline, pruning, synth_gen
from .characterize import (ErrorReport, TraitRecord, error_metrics, measure_angle,
                           measure_diameter, measure_length)
from .completion import CompletionConfig, CompletionResult, complete, estimate_skeleton, refine, synthesize_coarse
from .errors import BranchkitError
from .losses import LossValue, LossWeights
from .pipeline import RunConfig, evaluate_pipeline
from .pruning import PruneDecision, PruningPlan, emit_pruning_map, plan_pruning

__version__ = "0.1.0"
