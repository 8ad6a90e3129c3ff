"""Unit tests for the generation rules and derivations."""
