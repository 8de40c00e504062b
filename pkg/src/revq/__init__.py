"""revq: multi-agent LLM code review with deterministic replay."""

__version__ = "0.1.0"
