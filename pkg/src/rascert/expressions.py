"""Closed-form expressions for user-defined drift, diffusion and policies.

The grammar is a whitelisted subset of Python expressions: ``+``, ``-``,
``*``, numeric constants, ``pi``, variable names and calls to ``sin``,
``cos``, ``exp`` and ``tanh``. Every expression evaluates both pointwise on
numpy arrays and on :class:`~rascert.interval.Interval` values.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .interval import Interval, iv_fn, iv_mul

FUNCTIONS = ("sin", "cos", "exp", "tanh")
CONSTANTS = {"pi": math.pi}


@dataclass(frozen=True)
class Expr:
    source: str
    tree: ast.expr
    names: frozenset[str]

    @property
    def is_zero(self) -> bool:
        return isinstance(self.tree, ast.Constant) and self.tree.value == 0

    def __call__(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        return _eval_point(self.tree, env)

    def interval(self, env: Mapping[str, Interval]) -> Interval:
        out = _eval_iv(self.tree, env)
        return out if isinstance(out, Interval) else Interval.point(out)


def parse(source: str, variables) -> Expr:
    """Parse ``source`` allowing only the given variable names."""
    try:
        tree = ast.parse(str(source).strip(), mode="eval").body
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}") from None
    allowed = set(variables)
    used: set[str] = set()
    _check(tree, allowed, used, source)
    return Expr(str(source), tree, frozenset(used))


def _check(node, allowed, used, source):
    if isinstance(node, ast.BinOp):
        if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult)):
            raise ConfigError(f"operator not allowed in {source!r}")
        _check(node.left, allowed, used, source)
        _check(node.right, allowed, used, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ConfigError(f"operator not allowed in {source!r}")
        _check(node.operand, allowed, used, source)
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant in {source!r}")
    elif isinstance(node, ast.Name):
        if node.id in CONSTANTS:
            return
        if node.id not in allowed:
            raise ConfigError(f"unknown variable {node.id!r} in {source!r}")
        used.add(node.id)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ConfigError(f"function not allowed in {source!r}")
        if len(node.args) != 1 or node.keywords:
            raise ConfigError(f"functions take exactly one argument: {source!r}")
        _check(node.args[0], allowed, used, source)
    else:
        raise ConfigError(f"unsupported syntax in {source!r}")


def _eval_point(node, env):
    if isinstance(node, ast.BinOp):
        a, b = _eval_point(node.left, env), _eval_point(node.right, env)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        return a * b
    if isinstance(node, ast.UnaryOp):
        v = _eval_point(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return CONSTANTS[node.id] if node.id in CONSTANTS else env[node.id]
    fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}[node.func.id]
    return fn(_eval_point(node.args[0], env))


def _eval_iv(node, env):
    # plain floats stay exact; Intervals appear once a variable is involved
    if isinstance(node, ast.BinOp):
        a, b = _eval_iv(node.left, env), _eval_iv(node.right, env)
        if not isinstance(a, Interval) and not isinstance(b, Interval):
            return _eval_point(node, {})
        if isinstance(node.op, ast.Add):
            return a + b if isinstance(a, Interval) else b + a
        if isinstance(node.op, ast.Sub):
            return a - b if isinstance(a, Interval) else -(b - a)
        return iv_mul(a, b)
    if isinstance(node, ast.UnaryOp):
        v = _eval_iv(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return CONSTANTS[node.id] if node.id in CONSTANTS else env[node.id]
    arg = _eval_iv(node.args[0], env)
    if not isinstance(arg, Interval):
        return _eval_point(node, {})
    return iv_fn(node.func.id, arg)
