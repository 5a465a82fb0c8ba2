"""Unit-test-driven RL harness for function-level code synthesis.

Subpackages cover dataset ingestion, sandboxed execution, reward shaping
with an adaptive KL penalty, a pluggable policy (built-in toy model plus a
wire protocol for external models), a regression critic, a canonicalizing
replay buffer, the training loop, pass@k evaluation, and a cross-language
unit-test augmentation pipeline.
"""

__version__ = "0.1.0"
