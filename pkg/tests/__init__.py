"""mctailor test suite."""
