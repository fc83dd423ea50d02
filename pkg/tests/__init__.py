"""Tests package for qchaos."""
