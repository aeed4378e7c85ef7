"""Event-based neural networks with gradients exact through the solver.

Networks of user-defined neuron ODEs are integrated with fixed-step Euler
between spike events; spike times are located by root finding on the step
interpolant and differentiated with the implicit function theorem.
"""

from .autodiff import Tape, Var, leaf, constant

__all__ = ["Tape", "Var", "leaf", "constant"]
