"""Certification of first- and second-order optimality conditions for
control-affine problems with a scalar state constraint."""

__version__ = "0.1.0"
