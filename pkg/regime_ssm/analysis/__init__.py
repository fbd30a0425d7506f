"""Variational inference, online EM, alerting, oracles and the detection harness."""
