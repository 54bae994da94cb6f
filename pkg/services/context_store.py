"""Context model: the fact base the adaptation planner reasons over.

Facts are typed propositions about the running system. Property values,
quality levels and assumptions have a single current value per name, so
asserting a new one replaces the old. Queries follow the closed-world
assumption: a fact that is not present is false.
"""

import copy
import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Set

from loguru import logger

from models.context import (
    Assumption,
    Bind,
    ComponentType,
    ConnectorType,
    IsComponent,
    IsConnector,
    PropertyValue,
    Proposition,
    QualityOf,
    proposition_to_dict,
)
from models.patterns import COMPONENT, CONNECTOR, Atom, ForAll, Predicate, StatePattern, Var
from models.qos import QualityLevel
from models.runtime import RuntimeModel
from utils.errors import BindingTypeError, NotFoundError


class ContextModel:
    """Fact base with binding indexes and a revision counter."""

    def __init__(self, facts: Iterable[Proposition] = ()):
        self._facts: Dict[tuple, Proposition] = {}
        self._outs: Dict[str, Set[str]] = {}
        self._ins: Dict[str, Set[str]] = {}
        self.revision = 0
        self._batch_depth = 0
        with self.batch():
            for fact in facts:
                self.assert_fact(fact)

    # Mutation -------------------------------------------------------------

    @contextmanager
    def batch(self) -> Iterator["ContextModel"]:
        """Group mutations so that they advance the revision once."""
        self._batch_depth += 1
        try:
            yield self
        finally:
            self._batch_depth -= 1
            if self._batch_depth == 0:
                self.revision += 1

    def touch(self) -> None:
        """Advance the revision without changing any fact."""
        self.revision += 1

    def assert_fact(self, fact: Proposition) -> "ContextModel":
        """
        Add a fact, replacing the current value of single-valued facts.

        Raises:
            BindingTypeError: If a Bind fact links two components
        """
        if isinstance(fact, Bind):
            if self.is_component(fact.source) and self.is_component(fact.target):
                raise BindingTypeError(
                    f"cannot bind component {fact.source} directly to component {fact.target}",
                    fact.source,
                )
            self._outs.setdefault(fact.source, set()).add(fact.target)
            self._ins.setdefault(fact.target, set()).add(fact.source)
        self._facts[fact.key] = fact
        if self._batch_depth == 0:
            self.revision += 1
        return self

    def retract_fact(self, fact: Proposition) -> "ContextModel":
        """Remove a fact; absent facts are ignored."""
        if self._facts.pop(fact.key, None) is None:
            return self
        if isinstance(fact, Bind):
            self._outs.get(fact.source, set()).discard(fact.target)
            self._ins.get(fact.target, set()).discard(fact.source)
        if self._batch_depth == 0:
            self.revision += 1
        return self

    def copy(self) -> "ContextModel":
        return copy.deepcopy(self)

    # Queries --------------------------------------------------------------

    @property
    def facts(self) -> List[Proposition]:
        return list(self._facts.values())

    def holds(self, fact: Proposition) -> bool:
        return self._facts.get(fact.key) == fact

    def is_component(self, node: str) -> bool:
        return (IsComponent.predicate, node) in self._facts

    def is_connector(self, node: str) -> bool:
        return (IsConnector.predicate, node) in self._facts

    def components(self) -> List[str]:
        return sorted(f.sc for f in self._facts.values() if isinstance(f, IsComponent))

    def connectors(self) -> List[str]:
        return sorted(f.con for f in self._facts.values() if isinstance(f, IsConnector))

    def component_type(self, sc: str) -> Optional[str]:
        fact = self._facts.get((ComponentType.predicate, sc))
        return fact.sc_type if fact else None

    def connector_type(self, con: str) -> Optional[str]:
        fact = self._facts.get((ConnectorType.predicate, con))
        return fact.con_type if fact else None

    def has_binding(self, source: str, target: str) -> bool:
        return target in self._outs.get(source, ())

    def in_bindings(self, node: str) -> List[str]:
        """
        Sources bound into ``node``, sorted by id.

        Raises:
            NotFoundError: If ``node`` is neither a component nor a connector
        """
        self._require(node)
        return sorted(self._ins.get(node, ()))

    def out_bindings(self, node: str) -> List[str]:
        self._require(node)
        return sorted(self._outs.get(node, ()))

    def value(self, name: str) -> Optional[float]:
        fact = self._facts.get((PropertyValue.predicate, name))
        return fact.value if fact else None

    def quality(self, name: str) -> Optional[QualityLevel]:
        fact = self._facts.get((QualityOf.predicate, name))
        return fact.level if fact else None

    def assumption(self, name: str) -> bool:
        fact = self._facts.get((Assumption.predicate, name))
        return bool(fact and fact.value)

    def _require(self, node: str) -> None:
        if not (self.is_component(node) or self.is_connector(node)):
            raise NotFoundError(f"'{node}' is neither a component nor a connector", node)

    def to_dict(self) -> Dict[str, object]:
        facts = sorted(self._facts.values(), key=lambda f: tuple(str(k) for k in f.key))
        return {"revision": self.revision, "facts": [proposition_to_dict(f) for f in facts]}


def context_from_runtime(runtime: RuntimeModel, assumptions: Mapping[str, bool] = None) -> ContextModel:
    """Build the initial context of a runtime model."""
    facts: List[Proposition] = []
    for sc_id, component in sorted(runtime.components.items()):
        facts.append(IsComponent(sc_id))
        facts.append(ComponentType(sc_id, component.sc_type))
    for con_id, connector in sorted(runtime.connectors.items()):
        facts.append(IsConnector(con_id))
        facts.append(ConnectorType(con_id, connector.con_type.value))
    facts.extend(Bind(b.source, b.target) for b in runtime.bindings)
    for name, value in sorted((assumptions or {}).items()):
        facts.append(Assumption(name, value))
    return ContextModel(facts)


# Entailment -----------------------------------------------------------------


@dataclass
class Entailment:
    """Outcome of an entailment query."""

    holds: bool
    witness: Dict[str, str] = field(default_factory=dict)
    failed: Optional[str] = None


def _atom_holds(ctx: ContextModel, atom: Atom) -> bool:
    p, args = atom.predicate, atom.args
    if p == Predicate.COMPONENT:
        result = ctx.is_component(args[0])
    elif p == Predicate.CONNECTOR:
        result = ctx.is_connector(args[0])
    elif p == Predicate.COMPONENT_TYPE:
        result = ctx.component_type(args[0]) == args[1]
    elif p == Predicate.CONNECTOR_TYPE:
        result = ctx.connector_type(args[0]) == args[1]
    elif p == Predicate.BIND:
        result = ctx.has_binding(args[0], args[1])
    elif p == Predicate.ASSUMPTION:
        result = ctx.assumption(args[0]) == bool(args[1])
    elif p == Predicate.QUALITY:
        level = ctx.quality(args[0])
        result = level is not None and level.value == args[1]
    elif p == Predicate.SAME_TYPE:
        t = ctx.component_type(args[0])
        result = t is not None and t == ctx.component_type(args[1])
    elif p == Predicate.DISTINCT:
        result = args[0] != args[1]
    elif p == Predicate.ISOLATED:
        result = not ctx._ins.get(args[0]) and not ctx._outs.get(args[0])
    else:
        raise ValueError(f"unknown predicate {p}")
    return result != atom.negated


def _is_ground(atom: Atom) -> bool:
    return not atom.variables()


def _domain(ctx: ContextModel, clause: ForAll, node: str) -> List[str]:
    if clause.members is not None:
        return list(clause.members)
    if not (ctx.is_component(node) or ctx.is_connector(node)):
        return []
    return ctx.in_bindings(node) if clause.over == "in" else ctx.out_bindings(node)


def _forall_holds(ctx: ContextModel, clause: ForAll) -> bool:
    node = clause.of
    if isinstance(node, Var):
        raise ValueError(f"unbound domain variable {node}")
    for member in _domain(ctx, clause, node):
        scope = {clause.var.name: member}
        if not all(_atom_holds(ctx, atom.substitute(scope)) for atom in clause.body):
            return False
    return True


def _candidates(ctx: ContextModel, var: Var) -> List[str]:
    if var.sort == COMPONENT:
        return ctx.components()
    if var.sort == CONNECTOR:
        return ctx.connectors()
    return sorted(ctx.components() + ctx.connectors())


def entails(ctx: ContextModel, pattern: StatePattern, bindings: Mapping[str, str] = None) -> Entailment:
    """
    Decide whether the context satisfies a pattern.

    Existential variables are assigned by backtracking over components or
    connectors in ascending id order, so the witness returned is the
    lexicographically smallest assignment in variable order. Universal
    clauses are checked once every existential variable is bound.

    Args:
        ctx: Context model
        pattern: Pattern to check
        bindings: Variables fixed in advance

    Returns:
        Entailment with the witness, or the first conjunct found unsatisfied
    """
    fixed = dict(bindings or {})
    pattern = pattern.substitute(fixed)
    variables = pattern.variables()

    # Atoms are checked at the search depth where their last variable is bound
    levels: List[List[Atom]] = [[] for _ in range(len(variables) + 1)]
    positions = {v.name: i + 1 for i, v in enumerate(variables)}
    for atom in pattern.atoms:
        depth = max((positions[v.name] for v in atom.variables()), default=0)
        levels[depth].append(atom)

    for atom in levels[0]:
        if not _atom_holds(ctx, atom):
            return Entailment(False, failed=atom.describe())

    assignment: Dict[str, str] = {}

    def search(index: int) -> bool:
        if index == len(variables):
            ground = pattern.substitute(assignment)
            return all(_forall_holds(ctx, clause) for clause in ground.foralls)
        var = variables[index]
        for candidate in _candidates(ctx, var):
            assignment[var.name] = candidate
            if all(_atom_holds(ctx, atom.substitute(assignment)) for atom in levels[index + 1]):
                if search(index + 1):
                    return True
        assignment.pop(var.name, None)
        return False

    if search(0):
        witness = dict(fixed)
        witness.update(assignment)
        return Entailment(True, witness=witness)
    return Entailment(False, failed=_diagnose(ctx, pattern, levels))


def _diagnose(ctx: ContextModel, pattern: StatePattern, levels: List[List[Atom]]) -> str:
    """Name the first conjunct that no assignment can satisfy."""
    for depth_atoms in levels[1:]:
        for atom in depth_atoms:
            single = StatePattern(atoms=(atom,))
            if not _enumerate(ctx, single, limit=1):
                return atom.describe()
    for clause in pattern.foralls:
        if not isinstance(clause.of, Var) and not _forall_holds(ctx, clause):
            return clause.describe()
    descriptions = pattern.describe()
    return " and ".join(descriptions) if descriptions else "true"


def _enumerate(ctx: ContextModel, pattern: StatePattern, limit: Optional[int] = None) -> List[Dict[str, str]]:
    variables = pattern.variables()
    found: List[Dict[str, str]] = []
    for values in itertools.product(*(_candidates(ctx, v) for v in variables)):
        assignment = {v.name: value for v, value in zip(variables, values)}
        ground = pattern.substitute(assignment)
        if all(_atom_holds(ctx, a) for a in ground.atoms) and all(
            _forall_holds(ctx, c) for c in ground.foralls
        ):
            found.append(assignment)
            if limit is not None and len(found) >= limit:
                break
    return found


def enumerate_models(ctx: ContextModel, pattern: StatePattern,
                     bindings: Mapping[str, str] = None) -> List[Dict[str, str]]:
    """
    Every satisfying assignment, found by exhaustive enumeration.

    This is the reference semantics ``entails`` must agree with; it is
    exponential and meant for checking small contexts.
    """
    fixed = dict(bindings or {})
    models = _enumerate(ctx, pattern.substitute(fixed))
    logger.debug(f"Enumerated {len(models)} models")
    return [{**fixed, **m} for m in models]
