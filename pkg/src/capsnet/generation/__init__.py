"""Generation rules, derivations and structure enumeration."""

from .derivation import (
    Convergence,
    Derivation,
    Growth,
    Neuron,
    Variable,
    derive,
    induced_network,
    replay,
)
from .enumeration import Enumeration, Semantics, enumerate_growth
from .isomorphism import canonical_form, is_isomorphic
from .rules import (
    apply_convergence,
    apply_growth,
    apply_neuron,
    apply_variable,
    is_scalar_net,
    scalar_cap,
)

__all__ = [
    "Convergence",
    "Derivation",
    "Enumeration",
    "Growth",
    "Neuron",
    "Semantics",
    "Variable",
    "apply_convergence",
    "apply_growth",
    "apply_neuron",
    "apply_variable",
    "canonical_form",
    "derive",
    "enumerate_growth",
    "induced_network",
    "is_isomorphic",
    "is_scalar_net",
    "replay",
    "scalar_cap",
]
