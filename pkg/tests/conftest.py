"""Keeps tests/ on sys.path so test modules can share oracle helpers."""
