"""Offline safe antenna-tilt optimisation with SPIBB-DQN."""
