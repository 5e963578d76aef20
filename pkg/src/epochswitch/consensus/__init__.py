"""Consensus instances behind a common replica interface."""
