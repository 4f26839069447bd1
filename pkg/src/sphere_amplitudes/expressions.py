"""Closed-form expressions over a complex variable ``z``.

Configuration files describe conformal factors and mass profiles as short
formulas such as ``"0.3*exp(-abs(z)**2)"``.  They are parsed with :mod:`ast`
and only a whitelist of names and operators is accepted, so loading a
configuration never executes arbitrary code.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "cosh": np.cosh,
    "sinh": np.sinh,
    "arctan": np.arctan,
    "abs": np.abs,
    "real": np.real,
    "imag": np.imag,
    "conj": np.conj,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}
_CONSTANTS = {"pi": np.pi, "e": np.e, "i": 1j}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub,
    ast.UAdd, ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE,
)


class ExpressionError(ValueError):
    """Raised when an expression uses unsupported syntax or names."""


@dataclass(frozen=True)
class Expression:
    """A parsed formula in the variable ``z``; callable on complex arrays."""

    source: str
    _code: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        try:
            tree = ast.parse(self.source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {self.source!r}: {exc.msg}") from exc
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ExpressionError(
                    f"unsupported syntax {type(node).__name__} in {self.source!r}")
            if isinstance(node, ast.Name) and node.id != "z" \
                    and node.id not in _FUNCTIONS and node.id not in _CONSTANTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.source!r}")
            if isinstance(node, ast.Call) and not (
                    isinstance(node.func, ast.Name) and node.func.id in _FUNCTIONS):
                raise ExpressionError(f"unsupported call in {self.source!r}")
        object.__setattr__(self, "_code", compile(tree, "<expression>", "eval"))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        namespace = {"z": z, **_FUNCTIONS, **_CONSTANTS}
        value = eval(self._code, {"__builtins__": {}}, namespace)  # noqa: S307 - whitelisted AST
        return np.broadcast_to(np.asarray(value), z.shape).copy() if np.ndim(value) == 0 else np.asarray(value)

    def real(self, z) -> np.ndarray:
        """Evaluate and return the real part as a float array."""
        return np.real(self(z)).astype(float)


def as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return Expression(repr(float(value)))
    if isinstance(value, str):
        return Expression(value)
    raise ExpressionError(f"cannot interpret {value!r} as an expression")
