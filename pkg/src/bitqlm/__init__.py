"""Bit-encoded quantum learning models."""
