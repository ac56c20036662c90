"""Normal forms for the unary-negation fragments.

`to_un_normal_form` pulls existential quantifiers out of conjunctions and
disjunctions exactly when the quantified subformula has more than one free
variable, so the width bound of translated modal formulas is preserved.
`to_strong_normal_form` additionally distributes non-unary disjunctions,
eliminates equalities, splits blocks into connected components, and leaves
every existential block as a neighborhood type plus one-variable
subformulas.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .syntax import (AND, ATOM, EQ, EXISTS, FALSE, FORALL, GFP, LFP, NOT, OR,
                     SVAR, TRUE, And, Atom, Eq, Exists, Formula, FragmentError,
                     Not, Or, TRUE_F, classify, free_fo_vars)

_BINDER_KINDS = (EXISTS, FORALL)


class _Fresh:
    """Deterministic fresh-variable supply avoiding every name in a formula."""

    def __init__(self, *formulas: Formula):
        used: set[str] = set()
        for f in formulas:
            for g in f.walk():
                used.update(g.terms)
                used.update(g.bound)
        self.used = used
        self.counter = 0

    def take(self, base: str = "x") -> str:
        while True:
            self.counter += 1
            name = f"{base}{self.counter}"
            if name not in self.used:
                self.used.add(name)
                return name


def rename_free(f: Formula, mapping: dict[str, str], fresh: _Fresh) -> Formula:
    """Capture-avoiding renaming of free first-order variables."""
    live = {k: v for k, v in mapping.items() if k in free_fo_vars(f)}
    if not live:
        return f
    if f.kind in _BINDER_KINDS or f.kind in (LFP, GFP):
        bound = list(f.bound)
        live = {k: v for k, v in live.items() if k not in bound}
        body = f.children[0]
        # freshen bound variables that would capture an incoming name
        clashes = {b for b in bound if b in live.values()}
        if clashes:
            ren = {b: fresh.take(b[0] if b[0].isalpha() else "x") for b in clashes}
            body = rename_free(body, ren, fresh)
            bound = [ren.get(b, b) for b in bound]
        body = rename_free(body, live, fresh)
        terms = tuple(mapping.get(t, t) for t in f.terms)
        return Formula(f.kind, (body,), f.rel, terms, f.var, tuple(bound))
    terms = tuple(live.get(t, t) for t in f.terms)
    children = tuple(rename_free(c, live, fresh) for c in f.children)
    return Formula(f.kind, children, f.rel, terms, f.var, f.bound)


# --- UN-normal form -----------------------------------------------------------

def to_un_normal_form(f: Formula) -> Formula:
    """Pull existentials up while the quantified subformula has >1 free variable.

    Directly nested existential blocks are merged into one block; quantifiers
    over subformulas with at most one free variable stay where they are (the
    lazy strategy keeps the width of modal translations at two).
    """
    fresh = _Fresh(f)

    def rec(g: Formula) -> Formula:
        if not g.children:
            return g
        if g.kind == EXISTS:
            body = rec(g.children[0])
            bound = list(g.bound)
            while body.kind == EXISTS:
                inner = list(body.bound)
                ren = {b: fresh.take(b[0] if b[0].isalpha() else "x")
                       for b in inner if b in bound}
                inner_body = body.children[0]
                if ren:
                    inner_body = rename_free(inner_body, ren, fresh)
                    inner = [ren.get(b, b) for b in inner]
                bound.extend(inner)
                body = inner_body
            return Exists(bound, body)
        if g.kind in (AND, OR):
            children = [rec(c) for c in g.children]
            pulled: list[str] = []
            rest: list[Formula] = []
            for c in children:
                if c.kind == EXISTS and len(free_fo_vars(c)) >= 2:
                    bound = list(c.bound)
                    body = c.children[0]
                    outside = set()
                    for other in children:
                        if other is not c:
                            outside |= free_fo_vars(other)
                    clashes = [b for b in bound if b in outside or b in pulled]
                    if clashes:
                        ren = {b: fresh.take(b[0] if b[0].isalpha() else "x")
                               for b in clashes}
                        body = rename_free(body, ren, fresh)
                        bound = [ren.get(b, b) for b in bound]
                    pulled.extend(bound)
                    rest.append(body)
                else:
                    rest.append(c)
            node = And(*rest) if g.kind == AND else Or(*rest)
            if pulled:
                return rec(Exists(pulled, node))
            return node
        children = tuple(rec(c) for c in g.children)
        return Formula(g.kind, children, g.rel, g.terms, g.var, g.bound)

    return rec(f)


def is_un_normal_form(f: Formula) -> bool:
    """Every existential is directly below another one, at the root, or has
    at most one free variable."""

    def rec(g: Formula, parent: str | None) -> bool:
        if g.kind == EXISTS and parent is not None and parent != EXISTS:
            if len(free_fo_vars(g)) > 1:
                return False
        return all(rec(c, g.kind) for c in g.children)

    return rec(f, None)


def width(f: Formula) -> int:
    """Distinct variable count after greedy reuse across disjoint scopes.

    An upper bound on the minimal-strategy width: bound variables are
    renamed from a canonical pool, reusing any pool name not occupied by a
    variable that is free in the block.
    """
    g = to_un_normal_form(f)
    used: set[str] = set()

    def canon(i: int) -> str:
        return f"v{i}"

    def assign(node: Formula, env: dict[str, str]) -> None:
        if node.kind in _BINDER_KINDS:
            occupied = {env[v] for v in free_fo_vars(node) if v in env}
            new_env = dict(env)
            for b in node.bound:
                i = 1
                while canon(i) in occupied:
                    i += 1
                occupied.add(canon(i))
                used.add(canon(i))
                new_env[b] = canon(i)
            assign(node.children[0], new_env)
            return
        if node.kind in (LFP, GFP):
            body_env = {node.bound[0]: canon(1)}
            used.add(canon(1))
            assign(node.children[0], body_env)
            return
        for c in node.children:
            assign(c, env)

    free = sorted(free_fo_vars(g))
    env = {v: canon(i + 1) for i, v in enumerate(free)}
    used.update(env.values())
    assign(g, env)
    return len(used)


# --- neighborhood types -------------------------------------------------------

@dataclass(frozen=True)
class NeighborhoodType:
    """An equality-free conjunction of relational atoms over z1..zn.

    `atoms` holds (relation, positions) pairs with 0-based positions into
    the variable list; `pin` is the position equated with the outer free
    variable, if any.
    """

    num_vars: int
    atoms: tuple[tuple[str, tuple[int, ...]], ...]
    pin: int | None = None

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(f"z{i + 1}" for i in range(self.num_vars))

    @property
    def has_repeated_variable(self) -> bool:
        return any(len(set(pos)) != len(pos) for _, pos in self.atoms)

    def key(self) -> tuple:
        """Identity up to variable renaming (and ignoring the pin)."""
        best = None
        for perm in itertools.permutations(range(self.num_vars)):
            atoms = tuple(sorted((rel, tuple(perm[p] for p in pos))
                                 for rel, pos in self.atoms))
            if best is None or atoms < best:
                best = atoms
        return (self.num_vars, best)

    def as_structure(self):
        from .structures import Structure
        rels: dict[str, tuple[int, set]] = {}
        for rel, pos in self.atoms:
            rels.setdefault(rel, (len(pos), set()))
            rels[rel][1].add(tuple(self.variables[p] for p in pos))
        return Structure(frozenset(self.variables),
                         {n: (ar, frozenset(ts)) for n, (ar, ts) in rels.items()})

    def render(self) -> str:
        if not self.atoms:
            return "{}"
        names = self.variables
        return " & ".join(f"{rel}({','.join(names[p] for p in pos)})"
                          for rel, pos in self.atoms)


@dataclass(frozen=True)
class BlockShape:
    """One existential block read off a strong-normal-form formula."""

    bound: tuple[str, ...]
    tau: NeighborhoodType
    pin_outer: str | None            # the outer variable of the pin equality
    conjuncts: tuple[tuple[int, Formula], ...]  # (variable position, subformula)
    closed: tuple[Formula, ...]      # conjuncts without free variables


def read_block(block: Formula) -> BlockShape | None:
    """Interpret an existential block as tau + pin + unary subformulas.

    Returns None when the block does not have the strong-normal-form shape.
    """
    if block.kind != EXISTS:
        return None
    bound = list(block.bound)
    pos_of = {v: i for i, v in enumerate(bound)}
    body = block.children[0]
    members = list(body.children) if body.kind == AND else [body]
    atoms: list[tuple[str, tuple[int, ...]]] = []
    conjuncts: list[tuple[int, Formula]] = []
    closed: list[Formula] = []
    pin_pos: int | None = None
    pin_outer: str | None = None
    for c in members:
        if c.kind == ATOM and set(c.terms) <= set(bound) and (
                len(c.terms) > 1 or len(bound) == 1):
            atoms.append((c.rel, tuple(pos_of[t] for t in c.terms)))
            continue
        if c.kind == EQ:
            inside = [t for t in c.terms if t in pos_of]
            outside = [t for t in c.terms if t not in pos_of]
            if len(inside) == 1 and len(outside) == 1 and pin_pos is None:
                pin_pos = pos_of[inside[0]]
                pin_outer = outside[0]
                continue
            return None
        fv = free_fo_vars(c)
        if not fv:
            closed.append(c)
            continue
        if len(fv) == 1 and next(iter(fv)) in pos_of:
            conjuncts.append((pos_of[next(iter(fv))], c))
            continue
        return None
    tau = NeighborhoodType(len(bound), tuple(atoms), pin=pin_pos)
    return BlockShape(tuple(bound), tau, pin_outer, tuple(conjuncts), tuple(closed))


# --- strong normal form -------------------------------------------------------

def existential_closure(f: Formula) -> Formula:
    fv = sorted(free_fo_vars(f))
    return Exists(fv, f) if fv else f


def to_strong_normal_form(f: Formula, close_free: bool = True) -> Formula:
    """Lemma-style normal form: unary disjunctions only, equality-free
    neighborhood types, connected blocks.

    Free variables are existentially closed first (the form is defined for
    sentences).  Unary atoms outside blocks are wrapped as pinned
    single-variable blocks so that every original-signature atom lives in
    some neighborhood type.
    """
    if not classify(f).unfp:
        raise FragmentError("strong normal form is defined for the fixpoint fragment")
    if free_fo_vars(f):
        if not close_free:
            raise FragmentError("strong normal form needs a sentence")
        f = existential_closure(f)
    f = to_un_normal_form(f)
    fresh = _Fresh(f)

    def chi(g: Formula) -> Formula:
        """Normalize at a chi position (at most one free variable)."""
        k = g.kind
        if k == ATOM:
            # wrap so the atom lives in a neighborhood type
            fv = sorted(free_fo_vars(g))
            z = fresh.take("z")
            inner = rename_free(g, {v: z for v in fv}, fresh) if fv else g
            if fv:
                return Exists([z], And(inner, Eq(z, fv[0])))
            return g
        if k == EXISTS:
            return block(g)
        if not g.children:
            return g
        children = tuple(chi(c) for c in g.children)
        return Formula(k, children, g.rel, g.terms, g.var, g.bound)

    def block(g: Formula) -> Formula:
        bound = list(g.bound)
        body = g.children[0]
        disjuncts = _distribute(body, set(bound))
        parts = [one_disjunct(list(bound), conj) for conj in disjuncts]
        return Or(*parts) if len(parts) > 1 else parts[0]

    def one_disjunct(bound: list[str], members: list[Formula]) -> Formula:
        members = list(members)
        bound = list(bound)
        bound_set = set(bound)

        # atoms mentioning the block's outer variable get a pinned fresh
        # variable so that tau speaks about bound variables only
        for idx, c in enumerate(members):
            if c.kind == ATOM and not set(c.terms) <= bound_set:
                outer = sorted(set(c.terms) - bound_set)
                for o in outer:
                    w = fresh.take("z")
                    bound.append(w)
                    bound_set.add(w)
                    members.append(Eq(w, o))
                    c = rename_free(c, {o: w}, fresh)
                members[idx] = c

        # union-find over bound variables driven by equalities
        parent: dict[str, str] = {v: v for v in bound}

        def find(v: str) -> str:
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        pins: list[str] = []        # outer variables pinned to some class
        pinned_vars: set[str] = set()
        atoms: list[Formula] = []
        others: list[Formula] = []
        outer_parts: list[Formula] = []   # conjuncts not touching bound variables
        for c in members:
            if c.kind == EQ:
                a, b = c.terms
                ina, inb = a in parent, b in parent
                if ina and inb:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
                elif ina or inb:
                    pins.append(b if ina else a)
                    pinned_vars.add(a if ina else b)
                elif a == b:
                    pass
                else:
                    outer_parts.append(c)
            elif c.kind == ATOM:
                atoms.append(c)
            elif c.kind == TRUE:
                pass
            elif free_fo_vars(c) & bound_set:
                others.append(c)
            else:
                outer_parts.append(c)
        # all pinned classes collapse into one: they all equal the outer variable
        outer_var = pins[0] if pins else None
        reps = sorted({find(r) for r in pinned_vars})
        for r in reps[1:]:
            parent[r] = reps[0]
        mapping = {v: find(v) for v in bound}
        atoms = [rename_free(a, mapping, fresh) for a in atoms]
        others = [rename_free(o, mapping, fresh) for o in others]
        pinned_rep = find(reps[0]) if reps else None
        live: list[str] = []
        for v in bound:
            r = mapping[v]
            if r not in live:
                live.append(r)

        others = [chi(o) for o in others]
        outer_parts = [chi(o) for o in outer_parts]

        # connected components of variables through atoms of arity >= 2
        comp: dict[str, str] = {v: v for v in live}

        def cfind(v: str) -> str:
            while comp[v] != v:
                comp[v] = comp[comp[v]]
                v = comp[v]
            return v

        for a in atoms:
            vs = sorted(set(a.terms))
            for other in vs[1:]:
                ra, rb = cfind(vs[0]), cfind(other)
                if ra != rb:
                    comp[max(ra, rb)] = min(ra, rb)

        order = {v: i for i, v in enumerate(live)}
        groups: dict[str, list[str]] = {}
        for v in live:
            groups.setdefault(cfind(v), []).append(v)

        conj_of: dict[str, list[Formula]] = {v: [] for v in live}
        for o in others:
            conj_of[next(iter(free_fo_vars(o)))].append(o)

        pieces: list[Formula] = []
        extra_parts: list[Formula] = []
        for root in sorted(groups, key=lambda r: order[r]):
            vs = groups[root]
            group_atoms = [a for a in atoms if cfind(a.terms[0]) == root]
            has_pin = pinned_rep is not None and cfind(pinned_rep) == root
            if len(vs) > 1:
                # variables in no atom and unpinned split into their own blocks
                used = {t for a in group_atoms for t in a.terms}
                for v in list(vs):
                    if v not in used and not (has_pin and v == pinned_rep):
                        vs.remove(v)
                        sub = And(*conj_of[v]) if conj_of[v] else TRUE_F
                        extra_parts.append(Exists([v], sub))
                        conj_of[v] = []
                # unary atoms become pinned wrapper blocks so every fact
                # pattern lives in some neighborhood type
                if len(vs) > 1:
                    for a in list(group_atoms):
                        if len(a.terms) == 1:
                            group_atoms.remove(a)
                            w = fresh.take("z")
                            conj_of[a.terms[0]].append(
                                Exists([w], And(Atom(a.rel, w), Eq(w, a.terms[0]))))
            if not vs:
                continue
            group_conjs = [c for v in vs for c in conj_of[v]]
            if has_pin and not group_atoms and len(vs) == 1 and outer_var:
                # a pinned class without atoms just names the outer variable
                for c in group_conjs:
                    extra_parts.append(rename_free(c, {vs[0]: outer_var}, fresh))
                continue
            inner = group_atoms + group_conjs
            if has_pin:
                inner.append(Eq(pinned_rep, outer_var))
            body = And(*inner) if inner else TRUE_F
            pieces.append(Exists(vs, body))
        parts = pieces + extra_parts + outer_parts
        if not parts:
            return TRUE_F
        return And(*parts) if len(parts) > 1 else parts[0]

    def _distribute(body: Formula, bound: set[str]) -> list[list[Formula]]:
        """DNF over non-unary disjunctions; unary subformulas are opaque."""

        def dnf(g: Formula) -> list[list[Formula]]:
            if g.kind == AND:
                out: list[list[Formula]] = [[]]
                for c in g.children:
                    out = [a + b for a in out for b in dnf(c)]
                return out
            if g.kind == OR and len(free_fo_vars(g)) > 1:
                out = []
                for c in g.children:
                    out.extend(dnf(c))
                return out
            return [[g]]

        return dnf(body)

    top = chi(f)
    return top


def is_strong_normal_form(f: Formula) -> bool:
    """Blocks are tau + pin + one-variable parts; disjunctions are unary."""
    if not is_un_normal_form(f):
        return False

    def rec(g: Formula) -> bool:
        if g.kind == OR and len(free_fo_vars(g)) > 1:
            return False
        if g.kind == EXISTS:
            shape = read_block(g)
            if shape is None:
                return False
            used = {p for _, pos in shape.tau.atoms for p in pos}
            for i in range(len(shape.bound)):
                if i not in used and i != shape.tau.pin and len(shape.bound) > 1:
                    return False
            body = g.children[0]
            members = list(body.children) if body.kind == AND else [body]
            return all(rec(c) for c in members
                       if c.kind not in (ATOM, EQ, TRUE))
        return all(rec(c) for c in g.children)

    return rec(f)


def extract_neighborhood_types(f: Formula) -> list[NeighborhoodType]:
    """Every tau occurring in an existential block, deduplicated up to renaming."""
    seen: dict[tuple, NeighborhoodType] = {}

    def rec(g: Formula) -> None:
        if g.kind == EXISTS:
            shape = read_block(g)
            if shape is not None:
                tau = shape.tau
                if len(shape.bound) == 1 and tau.pin is None and shape.pin_outer is None:
                    tau = NeighborhoodType(tau.num_vars, tau.atoms, pin=0)
                seen.setdefault(tau.key(), tau)
                for _, c in shape.conjuncts:
                    rec(c)
                for c in shape.closed:
                    rec(c)
                return
        for c in g.children:
            rec(c)

    rec(f)
    return [seen[k] for k in sorted(seen)]


def max_type_size(ntypes) -> int:
    return max((t.size for t in ntypes), default=0)
