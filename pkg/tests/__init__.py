"""Tests for the adaptive process engine."""
