"""ContrastGuard test suite."""
