"""Figures for regime posteriors, transition matrices and KL threshold sweeps."""
