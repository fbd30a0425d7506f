# Tests package for regime_ssm
