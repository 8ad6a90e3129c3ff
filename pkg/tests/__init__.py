"""Unit tests for the entire package."""
