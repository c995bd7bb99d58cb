"""Golden-pair selection for inference-time code repair.

The pipeline: curate initial guesses, generate improving (guess, fix)
candidate pairs, score every pair against a validation set to build the
fix-quality matrix, greedily extract an ordered complementary subset, and
evaluate the selection against best-of-N and self-repair baselines with
grounded unit-test metrics.
"""

__version__ = "0.1.0"
