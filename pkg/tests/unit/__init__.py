"""Unit tests for ContrastGuard."""
