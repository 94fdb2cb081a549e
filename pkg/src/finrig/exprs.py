"""A small arithmetic expression grammar for user-supplied coefficients.

Grammar: operators ``+ - * / ^`` (and ``**``), functions ``exp``, ``sin``,
``cos``, ``sqrt``, variables ``x1 ... xn``, and numeric literals.  Compiled
expressions evaluate on floats or jets, so user metrics and maps get exact
derivatives like the built-ins.
"""

from __future__ import annotations

import ast

from .errors import ConfigError
from . import jets as _jm

_FUNCS = {"exp": _jm.exp, "sin": _jm.sin, "cos": _jm.cos, "sqrt": _jm.sqrt}

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.USub, ast.UAdd)


def _check(node, nvars):
    if isinstance(node, ast.Expression):
        _check(node.body, nvars)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _ALLOWED_BINOPS):
            raise ConfigError(f"operator {type(node.op).__name__} not allowed")
        _check(node.left, nvars)
        _check(node.right, nvars)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _ALLOWED_UNARY):
            raise ConfigError(f"unary operator {type(node.op).__name__} not allowed")
        _check(node.operand, nvars)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ConfigError("only exp, sin, cos, sqrt calls are allowed")
        if len(node.args) != 1 or node.keywords:
            raise ConfigError(f"{node.func.id} takes exactly one argument")
        _check(node.args[0], nvars)
    elif isinstance(node, ast.Name):
        name = node.id
        if not (name.startswith("x") and name[1:].isdigit()):
            raise ConfigError(f"unknown variable {name!r} (use x1..x{nvars})")
        idx = int(name[1:])
        if not 1 <= idx <= nvars:
            raise ConfigError(f"variable {name!r} out of range (1..{nvars})")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ConfigError(f"literal {node.value!r} not allowed")
    else:
        raise ConfigError(f"syntax element {type(node).__name__} not allowed")


def compile_expression(src: str, nvars: int):
    """Compile an expression string into ``fn(xs) -> scalar`` over floats/jets."""
    text = src.replace("^", "**")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc}") from None
    _check(tree, nvars)
    code = compile(tree, "<expression>", "eval")

    def fn(xs):
        env = {f"x{i + 1}": xs[i] for i in range(nvars)}
        env.update(_FUNCS)
        return eval(code, {"__builtins__": {}}, env)

    fn.source = src
    return fn
