"""Numerics for the focusing Schrodinger equation with a combined
mass-subcritical and energy-critical power nonlinearity.

Submodules
----------
sharp_constants  Sobolev and Gagliardo-Nirenberg best constants
landscape        the scalar function f(c, rho) and the threshold mass c0
field            grids, sampled fields, energy functionals, dilations, orbit distance
ground_state     constrained local minimisation on the mass sphere
dynamics         free propagator, Strichartz norms, split-step evolution, Picard iteration
stability        orbital stability experiment harness
cli, io          command line front end and artifact IO
"""

__version__ = "0.1.0"
