"""Parallel-in-time integration laboratory.

A library of time-parallel solvers for 1D model PDEs (heat,
advection-diffusion, Burgers', second-order wave) together with a CLI
harness that reproduces the desk-scale convergence experiments each solver
family is known for.
"""

__version__ = "0.1.0"
