"""Tests for katolab package."""
