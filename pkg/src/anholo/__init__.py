"""Generic off-diagonal cosmological metrics on a 2+2 split chart (x1, x2, t, y):
parse generating functions, deform prime metrics, integrate the separated field
equations, and verify residuals for the canonical d-connection and for the
Levi-Civita connection."""

from anholo.exprdsl import Jet2, Expression, parse, eval_jet
from anholo.fields import ScalarField, ConstField, ExprField, GridField
from anholo.geometry import (
    NAdaptedMetric,
    Polarizations,
    SourceSpec,
    apply_polarizations,
    to_coordinate_matrix,
    anholonomy,
    frame_apply,
)

__all__ = [
    "Jet2", "Expression", "parse", "eval_jet",
    "ScalarField", "ConstField", "ExprField", "GridField",
    "NAdaptedMetric", "Polarizations", "SourceSpec",
    "apply_polarizations", "to_coordinate_matrix", "anholonomy", "frame_apply",
]
