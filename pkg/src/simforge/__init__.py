"""simforge: multi-agent LLM pipeline for generating and validating ns-3 simulations."""

__version__ = "0.1.0"
