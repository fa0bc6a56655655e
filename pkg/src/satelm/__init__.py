"""Satellite downlink impairments and widely-linear complex ELM post-distorters."""
