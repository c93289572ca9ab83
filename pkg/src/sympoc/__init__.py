"""Multi-agent trajectory planning with symplectic networks (SympOCnet).

Submodules: ``autodiff`` (reverse-mode tape), ``sympnet`` (G-SympNet),
``dynamics`` (Hamiltonians and barrier), ``constraints``, ``losses``,
``optim`` (Adam, L-BFGS), ``training``, ``pseudospectral``, ``scenarios`` and
``cli``.
"""

__version__ = "0.1.0"
