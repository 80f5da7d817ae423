"""Photon emission/absorption time correlations across a 1D tunnel barrier.

Modules: :mod:`~tunnelclock.scattering` (transfer matrices),
:mod:`~tunnelclock.quadrature` (oscillatory and pole quadrature),
:mod:`~tunnelclock.amplitude` (detection amplitudes),
:mod:`~tunnelclock.correlation` (p, w and the delta line) and
:mod:`~tunnelclock.cli`.
"""

__version__ = "0.1.0"
