"""Quantum network calculus with adiabatic elimination and instantaneous feedback.

Modules: :mod:`operators` (spaces, embeddings, pseudoinverses), :mod:`schur`
(generalized Schur complements), :mod:`slh` (triples, feedback, elimination),
:mod:`netdsl` (``.slh`` network files), :mod:`sim` (truncated-Fock master
equations) and :mod:`cli`.
"""

from importlib import resources

from .netdsl import ParseDiagnostic, ParseError, compile_network, dumps as print_network, parse, parse_file
from .operators import HilbertSpace, Operator, moore_penrose
from .schur import BlockMatrix, Partition, WellDefinednessError, banachiewicz_pinv, complement, generalized_schur
from .slh import (
    SLH,
    CommutativityReport,
    IllPosedNetworkError,
    ItoMatrix,
    OscillatorModel,
    PreconditionError,
    adiabatic_eliminate,
    check_commutativity,
    concatenate,
    concatenate_models,
    feedback,
    feedback_reduce,
    feedback_reduce_model,
    four_way_g,
    from_ito,
    g_matrix,
    ito_matrix,
    series_product,
    validate_network,
)

__version__ = "0.1.0"


def example_network(name: str) -> str:
    """Path of a bundled ``.slh`` example, e.g. ``example_network("beam_splitter_loop")``."""
    return str(resources.files(__package__) / "networks" / f"{name}.slh")


__all__ = [
    "BlockMatrix", "CommutativityReport", "HilbertSpace", "IllPosedNetworkError", "ItoMatrix", "Operator",
    "OscillatorModel", "ParseDiagnostic", "ParseError", "Partition", "PreconditionError", "SLH",
    "WellDefinednessError", "adiabatic_eliminate", "banachiewicz_pinv", "check_commutativity", "compile_network",
    "complement", "concatenate", "concatenate_models", "example_network", "feedback", "feedback_reduce",
    "feedback_reduce_model", "four_way_g", "from_ito", "g_matrix", "generalized_schur", "ito_matrix",
    "moore_penrose", "parse", "parse_file", "print_network", "series_product", "validate_network",
]
