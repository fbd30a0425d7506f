"""Generative model, Kalman filtering/smoothing, HMM recursions and flow features."""
