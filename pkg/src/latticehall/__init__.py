"""Hall conductance of interacting lattice fermions by exact diagonalization."""

__version__ = "0.1.0"
