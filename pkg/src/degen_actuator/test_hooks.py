"""Deliberate faults for exercising the verification suite."""

from __future__ import annotations

from dataclasses import replace

from .pde import DiscreteOperator


def corrupt_operator(M: DiscreteOperator, scale: float = 1e-2) -> DiscreteOperator:
    """Copy of ``M`` with the super-diagonal scaled, which breaks self-adjointness."""
    return replace(M, upper=M.upper * (1.0 + scale))
