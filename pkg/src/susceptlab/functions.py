"""Observables and perturbations as functions of one variable with exact derivatives.

Scenario files describe functions with a small expression grammar over
``x``: numeric constants, ``pi``, ``I``, ``+ - * /``, integer powers and
``sin``/``cos``/``exp``. Expressions are checked against that grammar on
the Python AST before sympy builds the derivatives.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import sympy

_FUNCS = {"sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp}
_CONSTS = {"pi": sympy.pi, "I": sympy.I}
_X = sympy.Symbol("x", real=True)


class GrammarError(ValueError):
    pass


def _to_sympy(node):
    if isinstance(node, ast.Expression):
        return _to_sympy(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sympy.nsimplify(node.value) if isinstance(node.value, int) else sympy.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "x":
            return _X
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise GrammarError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _to_sympy(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        lhs, rhs = _to_sympy(node.left), _to_sympy(node.right)
        if isinstance(node.op, ast.Add):
            return lhs + rhs
        if isinstance(node.op, ast.Sub):
            return lhs - rhs
        if isinstance(node.op, ast.Mult):
            return lhs * rhs
        if isinstance(node.op, ast.Div):
            if rhs.has(_X):
                raise GrammarError("division by an expression in x is not allowed")
            return lhs / rhs
        if isinstance(node.op, ast.Pow):
            if not (rhs.is_Integer and rhs >= 0):
                raise GrammarError("only non-negative integer powers are allowed")
            return lhs**rhs
        raise GrammarError(f"operator {type(node.op).__name__} not allowed")
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise GrammarError(f"{node.func.id} takes exactly one argument")
        return _FUNCS[node.func.id](_to_sympy(node.args[0]))
    raise GrammarError(f"unsupported syntax: {ast.dump(node)[:60]}")


def parse_expression(text: str):
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise GrammarError(f"cannot parse {text!r}: {exc.msg}") from None
    return _to_sympy(tree)


def _vectorize(expr):
    fn = sympy.lambdify(_X, expr, modules="numpy")
    is_complex = not expr.is_real and expr.has(sympy.I)

    def call(x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(fn(x))
        if is_complex:
            out = out.astype(complex)
        return np.broadcast_to(out, x.shape).copy() if out.shape != x.shape else out

    return call


@dataclass(frozen=True, eq=False)
class Fn:
    """A function of ``x`` with first and second derivatives.

    ``shift`` is subtracted from the value (used for mean normalisation)
    and does not affect the derivatives.
    """

    f: Callable
    df: Optional[Callable] = None
    d2f: Optional[Callable] = None
    label: str = ""
    shift: complex = 0.0

    def __call__(self, x):
        v = self.f(x)
        return v - self.shift if self.shift != 0 else v

    @property
    def has_derivative(self):
        return self.df is not None

    @classmethod
    def parse(cls, text: str) -> "Fn":
        expr = parse_expression(text)
        d1 = sympy.diff(expr, _X)
        d2 = sympy.diff(d1, _X)
        return cls(_vectorize(expr), _vectorize(d1), _vectorize(d2), label=str(text))

    @classmethod
    def zero(cls) -> "Fn":
        z = lambda x: np.zeros(np.shape(x))
        return cls(z, z, z, label="0")

    def scaled_sum(self, others, coeffs) -> "Fn":
        """``self + sum_i coeffs[i] * others[i]`` (shifts are dropped)."""
        parts = [self] + list(others)
        ws = [1.0] + [complex(c) if np.iscomplexobj(c) else float(c) for c in coeffs]

        def combo(attr):
            fns = [getattr(p, attr) for p in parts]
            if any(fn is None for fn in fns):
                return None
            return lambda x: sum(w * fn(x) for w, fn in zip(ws, fns))

        label = " + ".join([self.label] + [f"({c:.6g})*({o.label})" for c, o in zip(coeffs, others)])
        return Fn(combo("f"), combo("df"), combo("d2f"), label=label)


@dataclass(frozen=True, eq=False)
class Observable:
    """Observable ``phi`` with the recorded acim mean of the raw function."""

    fn: Fn
    mean: complex = 0.0
    normalized: bool = False

    def __call__(self, x):
        return self.fn(x)

    def derivative(self, x):
        if self.fn.df is None:
            raise ValueError("observable has no derivative evaluator")
        return self.fn.df(x)

    @property
    def label(self):
        return self.fn.label

    @classmethod
    def parse(cls, text):
        return cls(Fn.parse(text))

    def centered(self, mean) -> "Observable":
        """Observable shifted by ``mean`` and flagged as mean-normalised."""
        return Observable(replace(self.fn, shift=self.fn.shift + mean), mean=mean, normalized=True)


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Perturbation ``X`` (with ``X(a) = 0``) and its horizontality record."""

    fn: Fn
    order: int = 0
    residuals: tuple = field(default_factory=tuple)
    coefficients: tuple = field(default_factory=tuple)

    def __call__(self, x):
        return self.fn(x)

    def d(self, x):
        return self.fn.df(x)

    def d2(self, x):
        return self.fn.d2f(x)

    @property
    def label(self):
        return self.fn.label

    @classmethod
    def parse(cls, text, a=0.0):
        p = cls(Fn.parse(text))
        p.check_endpoint(a)
        return p

    @classmethod
    def zero(cls):
        return cls(Fn.zero())

    def check_endpoint(self, a, tol=1e-14):
        val = complex(np.asarray(self.fn(np.array([a])))[0])
        if abs(val) > tol:
            raise ValueError(f"perturbation must vanish at a={a}, got X(a)={val}")


def sup_abs(fn, lo, hi, extra=None, samples=4097):
    """Sampled ``sup |fn|`` on ``[lo, hi]`` (plus any extra points)."""
    pts = np.linspace(lo, hi, samples)
    vals = np.abs(fn(pts))
    s = float(vals.max()) if vals.size else 0.0
    if extra is not None and len(extra):
        s = max(s, float(np.abs(fn(np.asarray(extra))).max()))
    return s
