"""Discrete heat kernels, Kato constants and entropy on meshes and graphs."""
