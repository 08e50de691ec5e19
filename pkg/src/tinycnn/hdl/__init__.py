"""Verilog generation for the accelerator."""

from .emit import (
    EmitPlan,
    HdlLintError,
    build_tree,
    emit_all,
    emit_memfile,
    emit_top,
    memfile_raws,
    parse_memfile,
)
from .lint import lint_file, lint_tree
from .units import emit_unit

__all__ = [
    "EmitPlan", "HdlLintError", "build_tree", "emit_all", "emit_memfile", "emit_top",
    "memfile_raws", "parse_memfile", "lint_file", "lint_tree", "emit_unit",
]
