"""Configuration module for the adaptive process engine."""

from .settings import settings, Settings

__all__ = ["settings", "Settings"]
