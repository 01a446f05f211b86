"""Time-embedded algorithm unrolling for regularized least-squares MRI
reconstruction: forward model, CG solver, analytic proximal operators,
the full VAMP iteration, classical and time-embedded unrolled engines,
trainable proximal networks, and image quality metrics."""

__version__ = "0.1.0"
