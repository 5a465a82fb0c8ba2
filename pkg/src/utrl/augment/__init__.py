from .convert import (
    ConversionError,
    convert_assertion,
    convert_signature,
)
from .extract import SourceFunction, extract_functions
from .pipeline import (
    AugmentedInstance,
    PipelineResult,
    run_pipeline,
    solvability_filter,
    write_instances,
)
from .testgen import GeneratedSuite, GenerationFailure, filter_suite, generate_tests

__all__ = [
    "SourceFunction",
    "extract_functions",
    "GeneratedSuite",
    "GenerationFailure",
    "generate_tests",
    "filter_suite",
    "convert_signature",
    "convert_assertion",
    "ConversionError",
    "AugmentedInstance",
    "PipelineResult",
    "run_pipeline",
    "solvability_filter",
    "write_instances",
]
