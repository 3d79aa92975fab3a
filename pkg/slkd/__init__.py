"""Snapshot-curriculum knowledge distillation on a small numpy network."""
