"""PEFA: progressive error-feedback agents for LLM-driven RTL generation."""

__version__ = "0.1.0"
