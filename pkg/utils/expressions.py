"""Restricted arithmetic and boolean expressions.

Constraint properties, derived-property formulas, tactic effect formulas and
re-execution conditions are written as small Python-syntax expressions. They
are parsed once with :mod:`ast`, checked against a whitelist of node types
and evaluated by walking the tree, never with ``eval``.
"""

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Mapping, Optional

from utils.errors import ExpressionError

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}

_COMPARE = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}


def expected_attempts(availability: float, cap: float) -> float:
    """Mean number of attempts when retrying up to ``cap`` times."""
    if availability <= 0:
        return float(cap)
    return (1.0 - (1.0 - availability) ** cap) / availability


DEFAULT_FUNCTIONS: Dict[str, Callable[..., float]] = {
    "min": min,
    "max": max,
    "abs": abs,
    "sqrt": math.sqrt,
    "expected_attempts": expected_attempts,
}


@dataclass(frozen=True)
class Expression:
    """A parsed expression with the free names it reads."""

    source: str
    tree: ast.Expression = field(repr=False, compare=False)
    names: FrozenSet[str] = frozenset()

    def evaluate(
        self,
        variables: Mapping[str, Any],
        functions: Optional[Mapping[str, Callable[..., Any]]] = None,
    ) -> Any:
        """
        Evaluate the expression.

        Args:
            variables: Values for the free names
            functions: Callable whitelist; defaults to DEFAULT_FUNCTIONS

        Returns:
            The expression value

        Raises:
            ExpressionError: On unknown names or arithmetic failure
        """
        funcs = DEFAULT_FUNCTIONS if functions is None else functions
        try:
            return _Evaluator(variables, funcs).visit(self.tree.body)
        except ExpressionError:
            raise
        except (ArithmeticError, TypeError, ValueError) as e:
            raise ExpressionError(f"cannot evaluate '{self.source}': {e}", self.source)


class _Evaluator:
    def __init__(self, variables: Mapping[str, Any], functions: Mapping[str, Callable[..., Any]]):
        self.variables = variables
        self.functions = functions

    def visit(self, node: ast.AST) -> Any:
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in ("True", "False"):
                return node.id == "True"
            if node.id not in self.variables:
                raise ExpressionError(f"unknown name '{node.id}'", node.id)
            return self.variables[node.id]
        if isinstance(node, ast.BinOp):
            return _BINARY[type(node.op)](self.visit(node.left), self.visit(node.right))
        if isinstance(node, ast.UnaryOp):
            operand = self.visit(node.operand)
            if isinstance(node.op, ast.Not):
                return not operand
            return -operand if isinstance(node.op, ast.USub) else +operand
        if isinstance(node, ast.BoolOp):
            values = (self.visit(v) for v in node.values)
            return all(values) if isinstance(node.op, ast.And) else any(values)
        if isinstance(node, ast.Compare):
            left = self.visit(node.left)
            for op, comparator in zip(node.ops, node.comparators):
                right = self.visit(comparator)
                if not _COMPARE[type(op)](left, right):
                    return False
                left = right
            return True
        if isinstance(node, ast.IfExp):
            return self.visit(node.body) if self.visit(node.test) else self.visit(node.orelse)
        if isinstance(node, ast.Call):
            name = node.func.id
            if name not in self.functions:
                raise ExpressionError(f"unknown function '{name}'", name)
            return self.functions[name](*(self.visit(a) for a in node.args))
        raise ExpressionError(f"unsupported syntax {type(node).__name__}")


_ALLOWED_NODES = (
    ast.Expression, ast.Constant, ast.Name, ast.Load, ast.BinOp, ast.UnaryOp,
    ast.BoolOp, ast.Compare, ast.IfExp, ast.Call,
    ast.And, ast.Or, ast.Not, ast.USub, ast.UAdd,
    *_BINARY.keys(), *_COMPARE.keys(),
)


def parse_expression(source: str) -> Expression:
    """
    Parse and check an expression.

    Args:
        source: Expression text, e.g. ``"latency_ms < 500 and not failed"``

    Returns:
        Parsed Expression

    Raises:
        ExpressionError: If the text is not a permitted expression
    """
    if not isinstance(source, str) or not source.strip():
        raise ExpressionError("empty expression", str(source))
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as e:
        raise ExpressionError(f"invalid expression '{source}': {e.msg}", source)

    names = set()
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(f"'{source}' uses unsupported syntax {type(node).__name__}", source)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ExpressionError(f"'{source}' may only call plain functions", source)
        elif isinstance(node, ast.Name) and node.id not in ("True", "False"):
            names.add(node.id)
    callees = {n.func.id for n in ast.walk(tree) if isinstance(n, ast.Call)}
    return Expression(source=source, tree=tree, names=frozenset(names - callees))
