"""Integration tests for ContrastGuard."""
