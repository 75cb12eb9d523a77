"""SLO-aware elastic GPU scheduling and prompt-bank simulation for LLM prompt tuning."""

__version__ = "0.1.0"
