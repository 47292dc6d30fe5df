"""Narrow high-order stencils and spectral deferred correction integrators."""
