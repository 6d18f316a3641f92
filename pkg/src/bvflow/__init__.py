"""bvflow: stochastic flows with bounded-variation drift.

Simulates flows of dX = a(X) dt + dW for bounded BV drifts, builds the
continuous additive functionals driven by the drift's gradient measures,
and solves the matrix Stieltjes equation for the derivative of the flow
with respect to its initial point.
"""

__version__ = "0.1.0"

from .kernels import (
    Atom,
    BoxBoundary,
    Density,
    InfiniteCharacteristicError,
    KernelSingularityError,
    KernelValue,
    NotKatoError,
    SignedMeasureSpec,
    SphereSurface,
    ball_growth_probe,
    characteristic,
    characteristic_batch,
    characteristic_signed,
    kato_classify,
    kernel_value,
    measure_mass,
    mollify_measure,
    wiener_kernel,
    wiener_kernel_quad,
    wiener_kernel_radial,
)
from .quadrature import BumpMollifier
