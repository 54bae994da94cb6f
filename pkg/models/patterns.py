"""State patterns: conjunctive queries over the context model.

A pattern is a conjunction of atoms over existentially quantified
variables, optionally followed by universally quantified clauses that range
over the in- or out-bindings of a node. Negated atoms are closed-world
lookups.
"""

import enum
from dataclasses import dataclass, replace
from typing import Any, List, Mapping, Optional, Tuple, Union

COMPONENT = "component"
CONNECTOR = "connector"
NODE = "node"


@dataclass(frozen=True)
class Var:
    """A pattern variable of sort ``component``, ``connector`` or ``node`` (either)."""

    name: str
    sort: str = COMPONENT

    def __str__(self) -> str:
        return f"?{self.name}"


Term = Union[Var, str]


def resolve(term: Any, bindings: Mapping[str, str]) -> Any:
    """Replace a bound variable by its value; leave anything else as is."""
    if isinstance(term, Var) and term.name in bindings:
        return bindings[term.name]
    return term


class Predicate(str, enum.Enum):
    COMPONENT = "component"
    CONNECTOR = "connector"
    COMPONENT_TYPE = "component_type"
    CONNECTOR_TYPE = "connector_type"
    BIND = "bind"
    ASSUMPTION = "assumption"
    QUALITY = "quality"
    SAME_TYPE = "same_type"
    DISTINCT = "distinct"
    ISOLATED = "isolated"


@dataclass(frozen=True)
class Atom:
    predicate: Predicate
    args: Tuple[Any, ...]
    negated: bool = False

    def variables(self) -> List[Var]:
        return [a for a in self.args if isinstance(a, Var)]

    def substitute(self, bindings: Mapping[str, str]) -> "Atom":
        return replace(self, args=tuple(resolve(a, bindings) for a in self.args))

    def describe(self) -> str:
        rendered = ", ".join(str(a) if isinstance(a, Var) else repr(a) for a in self.args)
        text = f"{self.predicate.value}({rendered})"
        return f"not {text}" if self.negated else text


@dataclass(frozen=True)
class ForAll:
    """``forall var in In(of)`` (or ``Out(of)``): every body atom holds.

    ``members`` freezes the domain, e.g. to the bindings a node had before
    a tactic rewired it.
    """

    var: Var
    over: str
    of: Term
    body: Tuple[Atom, ...]
    members: Optional[Tuple[str, ...]] = None

    def substitute(self, bindings: Mapping[str, str]) -> "ForAll":
        inner = {k: v for k, v in bindings.items() if k != self.var.name}
        return replace(
            self,
            of=resolve(self.of, inner),
            body=tuple(atom.substitute(inner) for atom in self.body),
        )

    def describe(self) -> str:
        domain = f"In({self.of})" if self.over == "in" else f"Out({self.of})"
        if self.members is not None:
            domain = f"{domain}={list(self.members)}"
        body = " and ".join(atom.describe() for atom in self.body)
        return f"forall {self.var} in {domain}: {body}"


@dataclass(frozen=True)
class StatePattern:
    atoms: Tuple[Atom, ...] = ()
    foralls: Tuple[ForAll, ...] = ()

    def variables(self) -> List[Var]:
        """Existential variables in order of first appearance."""
        seen: List[Var] = []
        names = set()
        quantified = {f.var.name for f in self.foralls}
        candidates: List[Var] = []
        for atom in self.atoms:
            candidates.extend(atom.variables())
        for clause in self.foralls:
            if isinstance(clause.of, Var):
                candidates.append(clause.of)
            for atom in clause.body:
                candidates.extend(atom.variables())
        for var in candidates:
            if var.name not in names and var.name not in quantified:
                names.add(var.name)
                seen.append(var)
        return seen

    def substitute(self, bindings: Mapping[str, str]) -> "StatePattern":
        return StatePattern(
            atoms=tuple(a.substitute(bindings) for a in self.atoms),
            foralls=tuple(f.substitute(bindings) for f in self.foralls),
        )

    def conjoin(self, other: "StatePattern") -> "StatePattern":
        return StatePattern(self.atoms + other.atoms, self.foralls + other.foralls)

    def describe(self) -> List[str]:
        return [a.describe() for a in self.atoms] + [f.describe() for f in self.foralls]


def component(x: Term) -> Atom:
    return Atom(Predicate.COMPONENT, (x,))


def connector(x: Term) -> Atom:
    return Atom(Predicate.CONNECTOR, (x,))


def bind(source: Term, target: Term, negated: bool = False) -> Atom:
    return Atom(Predicate.BIND, (source, target), negated)


def component_type(x: Term, sc_type: str) -> Atom:
    return Atom(Predicate.COMPONENT_TYPE, (x, sc_type))


def connector_type(x: Term, con_type: str, negated: bool = False) -> Atom:
    return Atom(Predicate.CONNECTOR_TYPE, (x, con_type), negated)


def same_type(x: Term, y: Term) -> Atom:
    return Atom(Predicate.SAME_TYPE, (x, y))


def distinct(x: Term, y: Term) -> Atom:
    return Atom(Predicate.DISTINCT, (x, y))


def isolated(x: Term) -> Atom:
    return Atom(Predicate.ISOLATED, (x,))


def assumption(name: str, value: bool = True) -> Atom:
    return Atom(Predicate.ASSUMPTION, (name, value))


def quality(name: str, level: str) -> Atom:
    return Atom(Predicate.QUALITY, (name, level))


def forall_in(var: Var, of: Term, *body: Atom) -> ForAll:
    return ForAll(var=var, over="in", of=of, body=tuple(body))


def forall_out(var: Var, of: Term, *body: Atom) -> ForAll:
    return ForAll(var=var, over="out", of=of, body=tuple(body))
