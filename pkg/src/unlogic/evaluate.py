"""Model checking: reference oracle and the stratified/fixpoint evaluators.

`eval_fo` is the ground truth: satisfying sets computed directly from the
semantics of every connective, least fixpoints by iterating the induced
operator from the empty set.  `eval_unfo` evaluates by negation strata,
labeling elements with the truth of maximal one-variable subformulas via
backtracking homomorphism search.  `eval_unfp` solves alternation-free
formulas by joint fixpoint iteration per dependency stratum and general
formulas by the deterministic recursion that recomputes inner fixpoints on
every outer round.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .normal import to_un_normal_form
from .structures import Structure, find_homomorphisms
from .syntax import (AND, ATOM, BOX, BOXG, BOXI, BVAR, DIA, DIAG, DIAI, EQ,
                     EXISTS, FALSE, FALSE_F, FORALL, GFP, LET, LFP, MU, MVAR,
                     NOT, NU, OR, PROP, SVAR, TRUE, TRUE_F, Atom, Formula,
                     FragmentError, SetAtom, alternation_free, classify,
                     free_bool_vars, free_fo_vars, free_so_vars,
                     _fixpoint_dependencies, _sccs)

_AUX_PREFIX = "__label"
_SET_PREFIX = "__set_"


@dataclass
class Valuation:
    fo: dict[str, str] = field(default_factory=dict)
    so: dict[str, frozenset[str]] = field(default_factory=dict)
    bools: dict[str, bool] = field(default_factory=dict)


@dataclass(frozen=True)
class EvalResult:
    """Satisfying assignments over the formula's free variables.

    For sentences the variable tuple is empty and `truth` is the verdict;
    otherwise `rows` lists the satisfying tuples in `free_vars` order.
    """

    free_vars: tuple[str, ...]
    rows: frozenset[tuple[str, ...]]

    @property
    def truth(self) -> bool:
        if self.free_vars:
            raise ValueError("truth of an open formula; use rows")
        return bool(self.rows)

    def elements(self) -> frozenset[str]:
        if len(self.free_vars) != 1:
            raise ValueError("elements() needs exactly one free variable")
        return frozenset(r[0] for r in self.rows)

    def assignments(self) -> list[dict[str, str]]:
        return [dict(zip(self.free_vars, r)) for r in sorted(self.rows)]


# --- extensions: the definitional satisfying-set engine -----------------------

class _Ext:
    """Relational extension (column names + row set) of a subformula."""

    __slots__ = ("vars", "rows")

    def __init__(self, vars: tuple[str, ...], rows: set[tuple[str, ...]]):
        self.vars = vars
        self.rows = rows


def _ext_join(a: _Ext, b: _Ext) -> _Ext:
    shared = [v for v in a.vars if v in b.vars]
    out_vars = a.vars + tuple(v for v in b.vars if v not in a.vars)
    ia = [a.vars.index(v) for v in shared]
    ib = [b.vars.index(v) for v in shared]
    extra = [i for i, v in enumerate(b.vars) if v not in a.vars]
    index: dict[tuple, list[tuple]] = {}
    for rb in b.rows:
        index.setdefault(tuple(rb[i] for i in ib), []).append(tuple(rb[i] for i in extra))
    rows = set()
    for ra in a.rows:
        key = tuple(ra[i] for i in ia)
        for tail in index.get(key, ()):
            rows.add(ra + tail)
    return _Ext(out_vars, rows)


def _ext_expand(e: _Ext, vars: tuple[str, ...], dom: list[str]) -> _Ext:
    missing = [v for v in vars if v not in e.vars]
    if not missing:
        if e.vars == vars:
            return e
        idx = [e.vars.index(v) for v in vars]
        return _Ext(vars, {tuple(r[i] for i in idx) for r in e.rows})
    full_vars = e.vars + tuple(missing)
    rows = set()
    for r in e.rows:
        for tail in itertools.product(dom, repeat=len(missing)):
            rows.add(r + tail)
    idx = [full_vars.index(v) for v in vars]
    return _Ext(vars, {tuple(r[i] for i in idx) for r in rows})


def _ext_complement(e: _Ext, vars: tuple[str, ...], dom: list[str]) -> _Ext:
    e = _ext_expand(e, vars, dom)
    universe = set(itertools.product(dom, repeat=len(vars)))
    return _Ext(vars, universe - e.rows)


def _ext_project(e: _Ext, drop: set[str]) -> _Ext:
    keep = [i for i, v in enumerate(e.vars) if v not in drop]
    return _Ext(tuple(e.vars[i] for i in keep),
                {tuple(r[i] for i in keep) for r in e.rows})


def _atom_ext(m: Structure, rel: str, terms: tuple[str, ...]) -> _Ext:
    vars = tuple(dict.fromkeys(terms))
    rows = set()
    for t in m.tuples(rel):
        binding: dict[str, str] = {}
        ok = True
        for var, val in zip(terms, t):
            if binding.setdefault(var, val) != val:
                ok = False
                break
        if ok:
            rows.add(tuple(binding[v] for v in vars))
    return _Ext(vars, rows)


def _fo_ext(m: Structure, f: Formula, so: dict[str, frozenset[str]],
            bools: dict[str, bool]) -> _Ext:
    dom = sorted(m.domain)
    k = f.kind
    if k == TRUE:
        return _Ext((), {()})
    if k == FALSE:
        return _Ext((), set())
    if k == ATOM:
        return _atom_ext(m, f.rel, f.terms)
    if k == EQ:
        a, b = f.terms
        if a == b:
            return _Ext((a,), {(e,) for e in dom})
        return _Ext((a, b), {(e, e) for e in dom})
    if k == SVAR:
        if f.var not in so:
            raise FragmentError(f"unassigned set variable {f.var}")
        return _Ext((f.terms[0],), {(e,) for e in so[f.var]})
    if k == BVAR:
        if f.var not in bools:
            raise FragmentError(f"unassigned boolean variable {f.var}")
        return _Ext((), {()} if bools[f.var] else set())
    if k == NOT:
        inner = _fo_ext(m, f.children[0], so, bools)
        return _ext_complement(inner, tuple(sorted(free_fo_vars(f))), dom)
    if k == AND:
        out = _Ext((), {()})
        for c in f.children:
            out = _ext_join(out, _fo_ext(m, c, so, bools))
            if not out.rows:
                # keep the correct columns for complements higher up
                return _Ext(tuple(sorted(free_fo_vars(f))), set())
        return out
    if k == OR:
        vars = tuple(sorted(free_fo_vars(f)))
        rows: set[tuple[str, ...]] = set()
        for c in f.children:
            rows |= _ext_expand(_fo_ext(m, c, so, bools), vars, dom).rows
        return _Ext(vars, rows)
    if k == EXISTS:
        inner = _fo_ext(m, f.children[0], so, bools)
        inner = _ext_expand(inner, tuple(dict.fromkeys(inner.vars + f.bound)), dom)
        return _ext_project(inner, set(f.bound))
    if k == FORALL:
        inner = _fo_ext(m, f.children[0], so, bools)
        neg = _ext_complement(inner, tuple(dict.fromkeys(inner.vars + f.bound)), dom)
        some = _ext_project(neg, set(f.bound))
        return _ext_complement(some, tuple(sorted(free_fo_vars(f))), dom)
    if k in (LFP, GFP):
        body = f.children[0]
        x = f.bound[0]
        params = free_fo_vars(body) - {x}
        if params:
            raise FragmentError(
                f"fixpoint body has first-order parameters {sorted(params)}")
        final = _fixpoint_set(m, f, so, bools)
        return _Ext((f.terms[0],), {(e,) for e in final})
    if k == LET:
        definition, body = f.children
        val = bool(_fo_ext(m, definition, so, bools).rows)
        return _fo_ext(m, body, so, {**bools, f.var: val})
    raise FragmentError(f"eval_fo cannot evaluate node kind {k!r}")


def _fixpoint_set(m: Structure, f: Formula, so, bools) -> frozenset[str]:
    return fixpoint_stages(m, f, so, bools)[-1]


def fixpoint_stages(m: Structure, f: Formula,
                    so: dict[str, frozenset[str]] | None = None,
                    bools: dict[str, bool] | None = None) -> list[frozenset[str]]:
    """Approximation stages of a fixpoint node, from the start set to stability."""
    so = dict(so or {})
    bools = bools or {}
    body = f.children[0]
    x = f.bound[0]
    dom = frozenset(m.domain)
    current = frozenset() if f.kind == LFP else dom
    stages = [current]
    while True:
        so[f.var] = current
        ext = _fo_ext(m, body, so, bools)
        if x in ext.vars:
            i = ext.vars.index(x)
            nxt = frozenset(r[i] for r in ext.rows)
        else:
            nxt = dom if ext.rows else frozenset()
        if nxt == current:
            return stages
        stages.append(nxt)
        current = nxt


def eval_fo(m: Structure, f: Formula, v: Valuation | None = None) -> bool:
    """Reference oracle: direct satisfying-set semantics of FO with fixpoints."""
    v = v or Valuation()
    fv = free_fo_vars(f)
    missing = fv - set(v.fo)
    if missing:
        raise FragmentError(f"unassigned free variables {sorted(missing)}")
    for x, e in v.fo.items():
        if x in fv and e not in m.domain:
            raise FragmentError(f"assignment {x}={e!r} is outside the domain")
    ext = _fo_ext(m, f, dict(v.so), dict(v.bools))
    want = tuple(v.fo[x] for x in ext.vars)
    return want in ext.rows


def eval_fo_rows(m: Structure, f: Formula, so=None, bools=None) -> EvalResult:
    """All satisfying assignments of f under the oracle semantics."""
    ext = _fo_ext(m, f, dict(so or {}), dict(bools or {}))
    vars = tuple(sorted(free_fo_vars(f)))
    dom = sorted(m.domain)
    ext = _ext_expand(ext, vars, dom)
    return EvalResult(vars, frozenset(ext.rows))


# --- stratified evaluation of the negation-free core ---------------------------

class _EpSession:
    """Evaluates negation-free formulas over one fixed structure.

    Existential blocks with purely conjunctive bodies go through
    backtracking homomorphism search (the deterministic stand-in for the
    NP oracle); bodies containing non-unary disjunctions fall back to the
    extension engine.  One-variable subformula sets are memoized.
    """

    def __init__(self, m: Structure):
        self.m = m
        self.dom = sorted(m.domain)
        self.memo: dict[int, _Ext] = {}

    def rows(self, f: Formula) -> _Ext:
        hit = self.memo.get(id(f))
        if hit is not None:
            return hit
        out = self._rows(f)
        self.memo[id(f)] = out
        return out

    def _rows(self, f: Formula) -> _Ext:
        k = f.kind
        if k == TRUE:
            return _Ext((), {()})
        if k == FALSE:
            return _Ext((), set())
        if k == ATOM:
            return _atom_ext(self.m, f.rel, f.terms)
        if k == EQ:
            a, b = f.terms
            if a == b:
                return _Ext((a,), {(e,) for e in self.dom})
            return _Ext((a, b), {(e, e) for e in self.dom})
        if k == AND:
            out = _Ext((), {()})
            for c in f.children:
                out = _ext_join(out, self.rows(c))
            return out
        if k == OR:
            vars = tuple(sorted(free_fo_vars(f)))
            rows: set[tuple[str, ...]] = set()
            for c in f.children:
                rows |= _ext_expand(self.rows(c), vars, self.dom).rows
            return _Ext(vars, rows)
        if k == EXISTS:
            return self._block(f)
        raise FragmentError(f"unexpected node {k!r} in negation-free evaluation")

    def _block(self, f: Formula) -> _Ext:
        body = f.children[0]
        members = list(body.children) if body.kind == AND else [body]
        conjunctive = all(c.kind in (ATOM, EQ, TRUE) or len(free_fo_vars(c)) <= 1
                          for c in members)
        if not conjunctive:
            inner = self.rows(body)
            inner = _ext_expand(inner, tuple(dict.fromkeys(inner.vars + f.bound)),
                                self.dom)
            return _ext_project(inner, set(f.bound))
        return self._conjunctive_block(f, members)

    def _conjunctive_block(self, f: Formula, members: list[Formula]) -> _Ext:
        all_vars = sorted(free_fo_vars(f.children[0]) | set(f.bound))
        parent = {v: v for v in all_vars}

        def find(v: str) -> str:
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        atoms: list[tuple[str, tuple[str, ...]]] = []
        unary: list[tuple[str, Formula]] = []
        closed: list[Formula] = []
        for c in members:
            if c.kind == TRUE:
                continue
            if c.kind == EQ:
                ra, rb = find(c.terms[0]), find(c.terms[1])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            elif c.kind == ATOM:
                atoms.append((c.rel, c.terms))
            else:
                fv = free_fo_vars(c)
                if fv:
                    unary.append((next(iter(fv)), c))
                else:
                    closed.append(c)
        for c in closed:
            if not self.rows(c).rows:
                return _Ext(tuple(sorted(free_fo_vars(f))), set())
        reps = sorted({find(v) for v in all_vars})
        allowed: dict[str, set[str]] = {}
        for v, sub in unary:
            sat = self.unary_set(sub)
            r = find(v)
            allowed[r] = (allowed.get(r, set(self.dom)) & sat)
        cq = Structure(frozenset(reps), _cq_relations(atoms, find))
        homs = find_homomorphisms(cq, self.m, allowed=allowed)
        out_vars = tuple(sorted(free_fo_vars(f)))
        rows = {tuple(h[find(v)] for v in out_vars) for h in homs}
        return _Ext(out_vars, rows)

    def unary_set(self, f: Formula) -> set[str]:
        ext = self.rows(f)
        if not ext.vars:
            return set(self.dom) if ext.rows else set()
        return {r[0] for r in ext.rows}

    def truth(self, f: Formula) -> bool:
        return bool(self.rows(f).rows)


def _cq_relations(atoms, find) -> dict[str, tuple[int, frozenset]]:
    rels: dict[str, tuple[int, set]] = {}
    for rel, terms in atoms:
        mapped = tuple(find(t) for t in terms)
        rels.setdefault(rel, (len(mapped), set()))
        rels[rel][1].add(mapped)
    return {n: (ar, frozenset(ts)) for n, (ar, ts) in rels.items()}


def _replace(f: Formula, table: dict[Formula, Formula]) -> Formula:
    hit = table.get(f)
    if hit is not None:
        return hit
    if not f.children:
        return f
    children = tuple(_replace(c, table) for c in f.children)
    if children == f.children:
        return f
    return Formula(f.kind, children, f.rel, f.terms, f.var, f.bound)


def _innermost_negations(f: Formula) -> list[Formula]:
    out: list[Formula] = []
    seen: set[Formula] = set()

    def rec(g: Formula) -> bool:
        """Returns whether g contains a negation."""
        has = g.kind == NOT
        deeper = False
        for c in g.children:
            deeper = rec(c) or deeper
        if g.kind == NOT and not deeper:
            if g not in seen:
                seen.add(g)
                out.append(g)
        return has or deeper

    rec(f)
    return out


def _materialize_sets(m: Structure, f: Formula,
                      sets: dict[str, frozenset[str]]) -> tuple[Structure, Formula]:
    """Turn free set variables into fresh unary relations."""
    table: dict[Formula, Formula] = {}
    for g in f.walk():
        if g.kind == SVAR and g.var in sets:
            table[g] = Atom(_SET_PREFIX + g.var, g.terms[0])
    out = _replace(f, table)
    mm = m
    for name, elems in sorted(sets.items()):
        mm = mm.with_relation(_SET_PREFIX + name, 1, {(e,) for e in elems})
    return mm, out


def eval_unfo(m: Structure, f: Formula,
              so: dict[str, frozenset[str]] | None = None) -> EvalResult:
    """Stratified unary-negation evaluation.

    Per negation stratum, every maximal negated one-variable subformula is
    evaluated for all elements at once and replaced by a fresh unary label;
    the final negation-free formula is answered by homomorphism search.
    """
    frags = classify(f)
    if not (frags.unfo or (frags.unfp and not _has_fixpoints(f))):
        raise FragmentError("eval_unfo expects a unary-negation first-order formula")
    if so or free_so_vars(f):
        missing = free_so_vars(f) - set(so or {})
        if missing:
            raise FragmentError(f"unassigned set variables {sorted(missing)}")
        m, f = _materialize_sets(m, f, so or {})
    f = to_un_normal_form(f)
    out_vars = tuple(sorted(free_fo_vars(f)))
    aux_counter = 0
    while True:
        negs = _innermost_negations(f)
        if not negs:
            break
        session = _EpSession(m)
        table: dict[Formula, Formula] = {}
        for n in negs:
            inner = n.children[0]
            fv = free_fo_vars(inner)
            if len(fv) > 1:
                raise FragmentError("negation over a subformula with two free variables")
            if fv:
                x = next(iter(fv))
                sat = session.unary_set(inner)
                aux = f"{_AUX_PREFIX}{aux_counter}"
                aux_counter += 1
                m = m.with_relation(aux, 1, {(e,) for e in m.domain if e not in sat})
                table[n] = Atom(aux, x)
            else:
                table[n] = FALSE_F if session.truth(inner) else TRUE_F
        f = _replace(f, table)
    session = _EpSession(m)
    ext = session.rows(f)
    ext = _ext_expand(ext, out_vars, sorted(m.domain))
    return EvalResult(out_vars, frozenset(ext.rows))


def _has_fixpoints(f: Formula) -> bool:
    return any(g.kind in (LFP, GFP) for g in f.walk())


# --- fixpoint evaluation -------------------------------------------------------

def _defix(f: Formula) -> Formula:
    """Replace every maximal fixpoint subformula by its variable's atom."""
    if f.kind in (LFP, GFP):
        return SetAtom(f.var, f.terms[0])
    if not f.children:
        return f
    return Formula(f.kind, tuple(_defix(c) for c in f.children),
                   f.rel, f.terms, f.var, f.bound)


def _maximal_fixpoints(f: Formula) -> list[Formula]:
    if f.kind in (LFP, GFP):
        return [f]
    out: list[Formula] = []
    for c in f.children:
        out.extend(_maximal_fixpoints(c))
    return out


def _positive_fixpoint_occurrences(f: Formula) -> bool:
    """Every lfp/gfp node sits under an even number of negations."""

    def rec(g: Formula, parity: int) -> bool:
        if g.kind in (LFP, GFP) and parity % 2 == 1:
            return False
        p = parity + 1 if g.kind == NOT else parity
        return all(rec(c, p) for c in g.children)

    return rec(f, 0)


def _alpha_rows(m: Structure, f: Formula, env: dict[str, frozenset[str]]) -> EvalResult:
    """Evaluate a formula whose fixpoint subformulas are computed exactly first."""
    sets = dict(env)
    for node in _maximal_fixpoints(f):
        sets[node.var] = _eval_star_fixpoint(m, node, env)
    return eval_unfo(m, _defix(f), so=sets)


def _eval_star_fixpoint(m: Structure, node: Formula,
                        env: dict[str, frozenset[str]]) -> frozenset[str]:
    """Deterministic fixpoint computation; inner fixpoints are recomputed on
    every iteration under the current approximation."""
    body = node.children[0]
    x = node.bound[0]
    dom = frozenset(m.domain)
    current = frozenset() if node.kind == LFP else dom
    while True:
        inner_env = {**env, node.var: current}
        res = _alpha_rows(m, body, inner_env)
        if res.free_vars == (x,):
            derived = res.elements()
        elif not res.free_vars:
            derived = dom if res.truth else frozenset()
        else:
            raise FragmentError("fixpoint body must have one free variable")
        nxt = (current | derived) if node.kind == LFP else (current & derived)
        if nxt == current:
            return current
        current = nxt


def _thm54_rows(m: Structure, f: Formula, env: dict[str, frozenset[str]]) -> EvalResult:
    """Alternation-free evaluation: joint iteration per dependency stratum."""
    nodes = {g.var: g for g in f.walk() if g.kind in (LFP, GFP)}
    kind_of, edges = _fixpoint_dependencies(f)
    comps = _sccs(edges)  # reverse topological: dependencies come first
    sets: dict[str, frozenset[str]] = dict(env)
    dom = frozenset(m.domain)
    for comp in comps:
        comp_vars = sorted(comp)
        least = kind_of[comp_vars[0]] == "least"
        for xv in comp_vars:
            sets[xv] = frozenset() if least else dom
        changed = True
        while changed:
            changed = False
            for xv in comp_vars:
                body = nodes[xv].children[0]
                x = nodes[xv].bound[0]
                res = eval_unfo(m, _defix(body), so=sets)
                if res.free_vars == (x,):
                    derived = res.elements()
                elif not res.free_vars:
                    derived = dom if res.truth else frozenset()
                else:
                    raise FragmentError("fixpoint body must have one free variable")
                nxt = (sets[xv] | derived) if least else (sets[xv] & derived)
                if nxt != sets[xv]:
                    sets[xv] = nxt
                    changed = True
    return eval_unfo(m, _defix(f), so=sets)


def eval_unfp(m: Structure, f: Formula,
              so: dict[str, frozenset[str]] | None = None) -> EvalResult:
    """Model checking for the unary-negation fixpoint fragment.

    Alternation-free formulas whose fixpoint operators all occur positively
    are solved by joint iteration ordered by the dependency strata; all
    other formulas go through the deterministic recursion with exact inner
    fixpoints.
    """
    if not classify(f).unfp:
        raise FragmentError("eval_unfp expects a unary-negation fixpoint formula")
    env = {k: frozenset(v) for k, v in (so or {}).items()}
    missing = free_so_vars(f) - set(env)
    if missing:
        raise FragmentError(f"unassigned set variables {sorted(missing)}")
    if not _has_fixpoints(f):
        return eval_unfo(m, f, so=env)
    if alternation_free(f) and _positive_fixpoint_occurrences(f):
        return _thm54_rows(m, f, env)
    return _alpha_rows(m, f, env)


# --- modal fixpoint evaluation --------------------------------------------------

def eval_mlmu(k: Structure, f: Formula) -> frozenset[str]:
    """Fixpoint model checking over a Kripke structure by set iteration."""
    if not classify(f).mlmu:
        raise FragmentError("eval_mlmu expects a global two-way modal formula")
    for name, (ar, _) in k.relations.items():
        if ar > 2:
            raise FragmentError(f"Kripke structure has non-binary relation {name}")
    dom = frozenset(k.domain)
    succ: dict[str, dict[str, set[str]]] = {}
    pred: dict[str, dict[str, set[str]]] = {}
    for name, (ar, tuples) in k.relations.items():
        if ar != 2:
            continue
        succ[name] = {}
        pred[name] = {}
        for a, b in tuples:
            succ[name].setdefault(a, set()).add(b)
            pred[name].setdefault(b, set()).add(a)

    def sem(g: Formula, env: dict[str, frozenset[str]]) -> frozenset[str]:
        kd = g.kind
        if kd == TRUE:
            return dom
        if kd == FALSE:
            return frozenset()
        if kd == PROP:
            return frozenset(t[0] for t in k.tuples(g.rel))
        if kd == MVAR:
            return env[g.var]
        if kd == NOT:
            return dom - sem(g.children[0], env)
        if kd == AND:
            out = dom
            for c in g.children:
                out &= sem(c, env)
            return out
        if kd == OR:
            out = frozenset()
            for c in g.children:
                out |= sem(c, env)
            return out
        if kd in (DIA, DIAI, BOX, BOXI):
            s = sem(g.children[0], env)
            step = succ if kd in (DIA, BOX) else pred
            table = step.get(g.rel, {})
            if kd in (DIA, DIAI):
                return frozenset(a for a in dom if table.get(a, set()) & s)
            return frozenset(a for a in dom if table.get(a, set()) <= s)
        if kd == DIAG:
            return dom if sem(g.children[0], env) else frozenset()
        if kd == BOXG:
            return dom if sem(g.children[0], env) == dom else frozenset()
        if kd in (MU, NU):
            current = frozenset() if kd == MU else dom
            while True:
                nxt = sem(g.children[0], {**env, g.var: current})
                nxt = (current | nxt) if kd == MU else (current & nxt)
                if nxt == current:
                    return current
                current = nxt
        raise FragmentError(f"unexpected modal node {kd!r}")

    return sem(f, {})


# --- boolean let evaluation ------------------------------------------------------

def _subst_bool(f: Formula, b: str, value: Formula) -> Formula:
    if f.kind == BVAR and f.var == b:
        return value
    if not f.children:
        return f
    return Formula(f.kind, tuple(_subst_bool(c, b, value) for c in f.children),
                   f.rel, f.terms, f.var, f.bound)


def inline_lets(f: Formula) -> Formula:
    """Expand every let definition textually (the exponential oracle)."""
    if not f.children:
        return f
    children = tuple(inline_lets(c) for c in f.children)
    if f.kind == LET:
        definition, body = children
        return _subst_bool(body, f.var, definition)
    return Formula(f.kind, children, f.rel, f.terms, f.var, f.bound)


def eval_let(m: Structure, f: Formula) -> bool:
    """Evaluate boolean definitions in rank order, then the matrix."""
    if free_bool_vars(f):
        raise FragmentError(f"free boolean variables {sorted(free_bool_vars(f))}")
    if free_fo_vars(f):
        raise FragmentError("eval_let expects a sentence")
    if not classify(f).unfolet:
        raise FragmentError("eval_let expects a let-extended unary-negation formula")

    def step(g: Formula) -> Formula:
        """Resolve one innermost let whose definition is fully ground."""
        if g.kind == LET:
            definition, body = g.children
            definition = step(definition)
            if not any(h.kind in (LET, BVAR) for h in definition.walk()):
                val = eval_unfo(m, definition).truth
                return step(_subst_bool(body, g.var, TRUE_F if val else FALSE_F))
            return Formula(LET, (definition, step(body)), var=g.var)
        if not g.children:
            return g
        return Formula(g.kind, tuple(step(c) for c in g.children),
                       g.rel, g.terms, g.var, g.bound)

    g = f
    while any(h.kind == LET for h in g.walk()):
        g = step(g)
    return eval_unfo(m, g).truth
