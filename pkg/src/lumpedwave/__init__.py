"""Mass-lumped BDM1-P0 mixed finite elements for acoustic waves.

A 2D simulator for the first-order wave system (velocity/pressure form)
with vertex-rule mass lumping, explicit leapfrog time stepping, and
superconvergent post-processing of both solution variables, plus the
verification harness that reproduces the associated convergence tables.
"""

__version__ = "0.1.0"
