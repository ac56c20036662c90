"""Satisfiability: translation pipeline, bounded model search, entailment.

The pipeline normalizes a fixpoint sentence, rewrites it over stitch
diagrams via a catalog of rooted connected acyclic diagrams, translates the
result to the global two-way modal fixpoint language, and alternates a
direct bounded model search with a search over Kripke encodings whose
witnesses are decoded, stitched, and re-verified against the original
sentence.  SAT verdicts are always gated on oracle verification; definitive
UNSAT is issued only by the negation-depth-1 procedure, whose small-model
bound is complete.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from .evaluate import eval_fo, eval_fo_rows, Valuation
from .normal import (BlockShape, NeighborhoodType, _Fresh, existential_closure,
                     extract_neighborhood_types, read_block, rename_free,
                     to_strong_normal_form, to_un_normal_form)
from .structures import (BudgetExceededError, Structure, canonical_form,
                         find_homomorphisms, stitch, kripke_decode, KRIPKE_EDGE)
from .syntax import (AND, ATOM, BVAR, DIA, DIAG, DIAI, EQ, EXISTS, FALSE,
                     FORALL, GFP, LET, LFP, MU, MVAR, NOT, NU, OR, PROP, SVAR,
                     TRUE, TRUE_F, FALSE_F, And, Atom, Eq, Exists, Formula,
                     FragmentError, Not, Or, classify, free_fo_vars,
                     free_so_vars, ml_to_unfo, negation_depth, print_formula,
                     relations_of)


class SearchTimeout(RuntimeError):
    """Wall clock exhausted; carries the largest fully completed bound."""

    def __init__(self, completed: int):
        super().__init__(f"search timed out after completing size {completed}")
        self.completed = completed


@dataclass(frozen=True)
class Budget:
    max_domain_size: int = 6
    max_catalog_entries: int = 10000
    wall_clock_ms: int = 60000
    ml_step_nodes: int = 50000  # deterministic cap per modal-branch size step


@dataclass(frozen=True)
class SatResult:
    verdict: str                      # SAT | UNSAT | UNSAT_UP_TO
    witness: Structure | None = None
    bound: int | None = None
    trace: dict = field(default_factory=dict)

    @property
    def is_sat(self) -> bool:
        return self.verdict == "SAT"


# --- catalog of rooted connected acyclic stitch diagrams -----------------------

Fact = tuple[str, tuple[str, ...]]


@dataclass(frozen=True)
class FactTree:
    fact: Fact
    children: tuple["FactTree", ...]

    def elements(self) -> frozenset[str]:
        out = frozenset(self.fact[1])
        for c in self.children:
            out |= c.elements()
        return out


@dataclass(frozen=True)
class DiagramEntry:
    diagram: Structure
    root: Fact
    tree: FactTree


@dataclass(frozen=True)
class DiagramCatalog:
    ntypes: dict[str, NeighborhoodType]   # diagram relation name -> tau
    l: int
    entries: tuple[DiagramEntry, ...]

    def stitched(self, entry: DiagramEntry) -> Structure:
        return stitch(entry.diagram, self.ntypes)


def type_signature(ntypes) -> dict[str, NeighborhoodType]:
    """Deterministic diagram relation names T0, T1, ... in canonical order."""
    ordered = sorted((t for t in ntypes if t.atoms), key=lambda t: t.key())
    out: dict[str, NeighborhoodType] = {}
    for t in ordered:
        if not any(ex.key() == t.key() for ex in out.values()):
            out[f"T{len(out)}"] = t
    return out


def _tree_key(diagram: Structure, root: Fact | None = None) -> str:
    """Canonical encoding of a connected acyclic diagram.

    The incidence graph of such a diagram is a tree, so a rooted labeled
    tree encoding is a complete isomorphism invariant: fact nodes carry
    their relation name, fact-element edges their position, and unrooted
    diagrams take the least encoding over all fact rootings.
    """
    facts = diagram.facts()
    adj: dict = {}
    for i, (rel, t) in enumerate(facts):
        adj.setdefault(("f", i), [])
        for pos, e in enumerate(t):
            adj.setdefault(("e", e), [])
            adj[("f", i)].append((("e", e), pos))
            adj[("e", e)].append((("f", i), pos))

    def encode(node, parent) -> str:
        label = facts[node[1]][0] if node[0] == "f" else "."
        parts = sorted(f"{lbl}:{encode(nbr, node)}"
                       for nbr, lbl in adj[node] if nbr != parent)
        return label + "(" + ",".join(parts) + ")"

    if root is not None:
        return encode(("f", facts.index(root)), None)
    return min(encode(("f", i), None) for i in range(len(facts)))


def _fact_tree(diagram: Structure, root: Fact) -> FactTree:
    facts = diagram.facts()
    adj: dict[Fact, list[Fact]] = {f: [] for f in facts}
    for f, g in itertools.combinations(facts, 2):
        if set(f[1]) & set(g[1]):
            adj[f].append(g)
            adj[g].append(f)
    children: dict[Fact, list[Fact]] = {f: [] for f in facts}
    seen = {root}
    queue = [root]
    while queue:
        u = queue.pop(0)
        for w in sorted(adj[u]):
            if w not in seen:
                seen.add(w)
                children[u].append(w)
                queue.append(w)

    def build(f: Fact) -> FactTree:
        return FactTree(f, tuple(build(c) for c in children[f]))

    return build(root)


def enumerate_diagrams(ntypes, l: int, max_entries: int = 10000) -> DiagramCatalog:
    """All rooted connected acyclic stitch diagrams with at most l facts,
    up to root-preserving isomorphism.

    Diagrams grow fact by fact; every new fact shares exactly one element
    with the diagram built so far, which characterizes connected acyclic
    diagrams.  No fact repeats an element.
    """
    if l < 1:
        raise ValueError("l must be positive")
    if isinstance(ntypes, dict):
        sig = dict(ntypes)
    else:
        sig = type_signature(ntypes)
    arity = {name: t.num_vars for name, t in sig.items()}

    def fresh_elems(count: int, taken: set[str]) -> list[str]:
        out = []
        i = 0
        while len(out) < count:
            name = f"d{i}"
            if name not in taken:
                out.append(name)
                taken.add(name)
            i += 1
        return out

    diagrams: list[Structure] = []
    seen: set[str] = set()
    frontier: list[Structure] = []
    for name in sorted(sig):
        elems = fresh_elems(arity[name], set())
        d = Structure.make(elems, {name: [tuple(elems)]}, arities=arity)
        key = _tree_key(d)
        if key not in seen:
            seen.add(key)
            diagrams.append(d)
            frontier.append(d)
    for _ in range(l - 1):
        new_frontier: list[Structure] = []
        for d in frontier:
            for name in sorted(sig):
                ar = arity[name]
                for shared in sorted(d.domain):
                    for pos in range(ar):
                        taken = set(d.domain)
                        news = fresh_elems(ar - 1, taken)
                        t = news[:pos] + [shared] + news[pos:]
                        if d.has_fact(name, tuple(t)):
                            continue
                        rels = {r: (a, ts) for r, (a, ts) in d.relations.items()}
                        rels[name] = (ar, rels[name][1] | {tuple(t)})
                        d2 = Structure(d.domain | frozenset(news), rels)
                        key = _tree_key(d2)
                        if key in seen:
                            continue
                        seen.add(key)
                        diagrams.append(d2)
                        new_frontier.append(d2)
                        if len(diagrams) > max_entries:
                            raise BudgetExceededError(
                                f"diagram catalog exceeded {max_entries} diagrams")
        frontier = new_frontier

    entries: list[DiagramEntry] = []
    rooted_seen: set[str] = set()
    for d in diagrams:
        for root in d.facts():
            key = _tree_key(d, root)
            if key in rooted_seen:
                continue
            rooted_seen.add(key)
            entries.append(DiagramEntry(d, root, _fact_tree(d, root)))
            if len(entries) > max_entries:
                raise BudgetExceededError(
                    f"diagram catalog exceeded {max_entries} rooted entries")
    return DiagramCatalog(sig, l, tuple(entries))


# --- the stitch-diagram translation (unfp -> simple fragment) -------------------

@dataclass(frozen=True)
class SunfpTranslation:
    formula: Formula
    strong_form: Formula
    catalog: DiagramCatalog


def unfp_to_sunfp_full(f: Formula, max_catalog_entries: int = 10000,
                       already_strong: bool = False,
                       max_output_nodes: int = 2000000) -> SunfpTranslation:
    """Rewrite a fixpoint sentence over the stitch-diagram signature.

    Every neighborhood-type block is replaced by a disjunction over rooted
    catalog entries N and homomorphisms of the block's type into the
    stitching of N, each disjunct describing N top-down from the pinned
    element.  Boolean connectives and fixpoints commute.
    """
    snf = f if already_strong else to_strong_normal_form(f)
    ntypes = extract_neighborhood_types(snf)
    sig = type_signature(ntypes)
    l = max((t.size for t in sig.values()), default=1)
    catalog = enumerate_diagrams(sig, max(l, 1), max_entries=max_catalog_entries)
    fresh = _Fresh(snf)
    produced = [0]

    def spend(amount: int) -> None:
        produced[0] += amount
        if produced[0] > max_output_nodes:
            raise BudgetExceededError(
                f"translated formula exceeded {max_output_nodes} nodes")

    def fresh_var() -> str:
        return fresh.take("y")

    def translate(g: Formula) -> Formula:
        if g.kind == EXISTS:
            shape = read_block(g)
            if shape is None:
                raise FragmentError("block outside strong normal form: "
                                    + print_formula(g))
            return translate_block(shape)
        if g.kind == ATOM:
            raise FragmentError("bare atom outside a block; "
                                "run to_strong_normal_form first")
        if not g.children:
            return g
        children = tuple(translate(c) for c in g.children)
        return Formula(g.kind, children, g.rel, g.terms, g.var, g.bound)

    def translate_block(shape: BlockShape) -> Formula:
        conj_parts = [(pos, translate(c)) for pos, c in shape.conjuncts]
        closed = [translate(c) for c in shape.closed]
        if not shape.tau.atoms:
            # plain one-variable quantification commutes
            v = shape.bound[0]
            inner = [c for _, c in conj_parts] or [TRUE_F]
            out = Exists([v], And(*inner))
            return And(out, *closed) if closed else out
        tau_struct = _block_structure(shape)
        pin_var = shape.bound[shape.tau.pin] if shape.tau.pin is not None else None
        disjuncts: list[Formula] = []
        rendered: set[str] = set()
        for entry in catalog.entries:
            target = catalog.stitched(entry)
            for h in find_homomorphisms(tau_struct, target):
                if pin_var is not None and h[pin_var] not in entry.root[1]:
                    continue
                per_elem: dict[str, list[Formula]] = {}
                for (pos, c) in conj_parts:
                    per_elem.setdefault(h[shape.bound[pos]], []).append(c)
                chi = _chi(entry.tree, h[pin_var] if pin_var is not None else None,
                           shape.pin_outer, per_elem, fresh_var, fresh)
                key = print_formula(chi)
                spend(len(key) // 4 + 1)
                if key not in rendered:
                    rendered.add(key)
                    disjuncts.append(chi)
        if not disjuncts:
            base = FALSE_F
        else:
            base = Or(*disjuncts)
        return And(base, *closed) if closed else base

    out = translate(snf)
    return SunfpTranslation(out, snf, catalog)


def _block_structure(shape: BlockShape) -> Structure:
    rels: dict[str, tuple[int, set]] = {}
    for rel, pos in shape.tau.atoms:
        rels.setdefault(rel, (len(pos), set()))
        rels[rel][1].add(tuple(shape.bound[p] for p in pos))
    return Structure(frozenset(shape.bound),
                     {n: (ar, frozenset(ts)) for n, (ar, ts) in rels.items()})


def _chi(tree: FactTree, pin_elem: str | None, outer: str | None,
         per_elem: dict[str, list[Formula]], fresh_var, fresh: _Fresh) -> Formula:
    """Describe a rooted fact tree existentially, top-down."""
    rel, elems = tree.fact
    ys = [fresh_var() for _ in elems]
    slot = {e: ys[i] for i, e in enumerate(elems)}
    parts: list[Formula] = [Atom(rel, *ys)]
    if pin_elem is not None:
        parts.append(Eq(slot[pin_elem], outer))
    remaining = dict(per_elem)
    for e in sorted(set(elems)):
        if e in remaining:
            for c in remaining.pop(e):
                v = next(iter(free_fo_vars(c)), None)
                parts.append(rename_free(c, {v: slot[e]}, fresh) if v else c)
    for child in tree.children:
        shared = sorted(set(child.fact[1]) & set(elems))[0]
        sub_elems = child.elements()
        sub_assign = {e: cs for e, cs in remaining.items() if e in sub_elems}
        for e in sub_assign:
            remaining.pop(e)
        parts.append(_chi(child, shared, slot[shared], sub_assign, fresh_var, fresh))
    if remaining:
        raise FragmentError(
            f"homomorphism images {sorted(remaining)} outside the rooted subtree")
    return Exists(ys, And(*parts))


def unfp_to_sunfp(f: Formula, max_catalog_entries: int = 10000) -> Formula:
    return unfp_to_sunfp_full(f, max_catalog_entries).formula


# --- simple fragment to modal fixpoint language ---------------------------------

def _rel_prop(name: str) -> str:
    return f"p_{name}"


def sunfp_to_mlmu(f: Formula) -> Formula:
    """The gadget translation: guards become backward-forward diamond walks."""
    if not classify(f).sunfp:
        raise FragmentError("sunfp_to_mlmu expects a simple-fragment formula")

    def prop(name: str) -> Formula:
        return Formula(PROP, rel=name)

    def dia(sub: Formula) -> Formula:
        return Formula(DIA, (sub,), rel=KRIPKE_EDGE)

    def diai(sub: Formula) -> Formula:
        return Formula(DIAI, (sub,), rel=KRIPKE_EDGE)

    def tr(g: Formula) -> Formula:
        k = g.kind
        if k in (TRUE, FALSE):
            return g
        if k == ATOM:
            if len(g.terms) != 1:
                raise FragmentError("relational guard outside a block")
            return prop(_rel_prop(g.rel))
        if k == SVAR:
            return Formula(MVAR, var=g.var)
        if k == NOT:
            return Not(tr(g.children[0]))
        if k == AND:
            return And(*(tr(c) for c in g.children))
        if k == OR:
            return Or(*(tr(c) for c in g.children))
        if k in (LFP, GFP):
            body = tr(g.children[0])
            return Formula(MU if k == LFP else NU, (body,), var=g.var)
        if k == EXISTS:
            return tr_block(g)
        raise FragmentError(f"unexpected node {k!r} in the simple fragment")

    def tr_block(g: Formula) -> Formula:
        shape = read_block(g)
        if shape is None:
            raise FragmentError("existential block outside the simple fragment")
        by_pos: dict[int, list[Formula]] = {}
        for pos, c in shape.conjuncts:
            by_pos.setdefault(pos, []).append(tr(c))
        closed = [tr(c) for c in shape.closed]
        if not shape.tau.atoms:
            # plain one-variable quantification: jump
            inner = And(*by_pos[0]) if by_pos.get(0) else TRUE_F
            out = Formula(DIAG, (inner,))
            return And(out, *closed) if closed else out
        if len(shape.tau.atoms) != 1:
            raise FragmentError("simple-fragment guard must be a single atom")
        rel, positions = shape.tau.atoms[0]
        pin = shape.tau.pin
        if len(positions) == 1:
            # unary guards are direct labels in the encoding
            core = [prop(_rel_prop(rel))] + by_pos.get(positions[0], [])
            body = And(*core) if len(core) > 1 else core[0]
            out = body if pin is not None else Formula(DIAG, (body,))
            return And(out, *closed) if closed else out
        gadget = [prop(_rel_prop(rel))]
        for j, bound_pos in enumerate(positions):
            if pin is not None and bound_pos == pin:
                continue
            sub = And(*by_pos[bound_pos]) if by_pos.get(bound_pos) else TRUE_F
            gadget.append(dia(And(prop(f"p_{j + 1}"), dia(sub))))
        inner = And(*gadget) if len(gadget) > 1 else gadget[0]
        if pin is None:
            out = Formula(DIAG, (inner,))
        else:
            j0 = positions.index(pin) + 1
            out = diai(And(prop(f"p_{j0}"), diai(inner)))
            at_pin = by_pos.get(pin, [])
            if at_pin:
                out = And(*at_pin, out)
        return And(out, *closed) if closed else out

    return tr(f)


# --- interval (three-valued) evaluation for search pruning ----------------------

class IntervalEvaluator:
    """Compiled two-sided evaluation of a sentence over a partial structure.

    Facts carry states 0 (false), 1 (true), 2 (undecided); `evaluate`
    returns (lo, hi) bounds that are exact when no fact is undecided.
    Fixpoints iterate both bounds; set variables of enclosing fixpoints
    come in as (lo, hi) pairs, and results of parameter-free fixpoints are
    cached per evaluation.
    """

    def __init__(self, f: Formula, n: int, signature: dict[str, int]):
        self.n = n
        self.sig = dict(sorted(signature.items()))
        self.base: dict[str, int] = {}
        off = 0
        for rel, ar in self.sig.items():
            self.base[rel] = off
            off += n ** ar
        self.num_facts = off
        self.states = [2] * off
        self.cache: dict = {}
        self._node_count = 0
        slots: dict[str, int] = {}
        self.max_slots = [0]
        self.fn = self._compile(f, slots)
        self.env = [0] * max(self.max_slots[0], 1)
        self.so_env: dict[str, tuple[frozenset, frozenset]] = {}

    def fact_index(self, rel: str, t: tuple[int, ...]) -> int:
        idx = self.base[rel]
        mul = 1
        for d in reversed(t):
            idx += d * mul
            mul *= self.n
        return idx

    def facts(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for rel, ar in self.sig.items():
            for t in itertools.product(range(self.n), repeat=ar):
                out.append((rel, t))
        return out

    def evaluate(self) -> tuple[bool, bool]:
        self.cache.clear()
        return self.fn(self.env)

    def _slot(self, slots: dict[str, int], var: str) -> tuple[dict[str, int], int]:
        new = dict(slots)
        new[var] = len(slots)
        self.max_slots[0] = max(self.max_slots[0], len(new))
        return new, new[var]

    def _compile(self, f: Formula, slots: dict[str, int]):
        k = f.kind
        n = self.n
        states = self.states
        if k == TRUE:
            return lambda env: (True, True)
        if k == FALSE:
            return lambda env: (False, False)
        if k == ATOM:
            if f.rel not in self.base:
                return lambda env: (False, False)
            base = self.base[f.rel]
            ar = len(f.terms)
            pairs = [(slots[t], n ** (ar - 1 - i)) for i, t in enumerate(f.terms)]

            def atom(env, base=base, pairs=pairs):
                i = base
                for s, mul in pairs:
                    i += env[s] * mul
                st = states[i]
                return (st == 1, st != 0)

            return atom
        if k == EQ:
            s1, s2 = slots[f.terms[0]], slots[f.terms[1]]
            return lambda env: ((env[s1] == env[s2]),) * 2
        if k == SVAR:
            s = slots[f.terms[0]]
            var = f.var

            def svar(env, var=var, s=s):
                lo, hi = self.so_env[var]
                e = env[s]
                return (e in lo, e in hi)

            return svar
        if k == NOT:
            sub = self._compile(f.children[0], slots)
            return lambda env: (lambda p: (not p[1], not p[0]))(sub(env))
        if k == AND:
            subs = [self._compile(c, slots) for c in f.children]

            def conj(env, subs=subs):
                lo = hi = True
                for s in subs:
                    a, b = s(env)
                    lo = lo and a
                    hi = hi and b
                    if not hi:
                        return (False, False)
                return (lo, hi)

            return conj
        if k == OR:
            subs = [self._compile(c, slots) for c in f.children]

            def disj(env, subs=subs):
                lo = hi = False
                for s in subs:
                    a, b = s(env)
                    lo = lo or a
                    hi = hi or b
                    if lo:
                        return (True, True)
                return (lo, hi)

            return disj
        if k in (EXISTS, FORALL):
            inner_slots = dict(slots)
            sls = []
            for v in f.bound:
                inner_slots, s = self._slot(inner_slots, v)
                sls.append(s)
            sub = self._compile(f.children[0], inner_slots)
            universal = k == FORALL

            def quant(env, sub=sub, sls=sls, universal=universal):
                lo_any = hi_any = False
                lo_all = hi_all = True
                for combo in itertools.product(range(n), repeat=len(sls)):
                    for s, d in zip(sls, combo):
                        env[s] = d
                    a, b = sub(env)
                    lo_any = lo_any or a
                    hi_any = hi_any or b
                    lo_all = lo_all and a
                    hi_all = hi_all and b
                    if not universal and lo_any:
                        return (True, True)
                    if universal and not hi_all:
                        return (False, False)
                if universal:
                    return (lo_all, hi_all)
                return (lo_any, hi_any)

            return quant
        if k in (LFP, GFP):
            inner_slots, s = self._slot(dict(slots), f.bound[0])
            body = self._compile(f.children[0], inner_slots)
            term_slot = slots[f.terms[0]]
            node_key = id(f)
            free_sets = tuple(sorted(free_so_vars(f)))
            least = k == LFP

            def fixpoint(env, body=body, s=s, node_key=node_key,
                         free_sets=free_sets, least=least, term_slot=term_slot):
                env_key = (node_key, tuple((v, self.so_env[v]) for v in free_sets))
                hit = self.cache.get(env_key)
                if hit is None:
                    full = frozenset(range(n))
                    pair = []
                    for side in (0, 1):
                        cur = frozenset() if least else full
                        while True:
                            self.so_env[f.var] = (cur, cur)
                            derived = set()
                            for a in range(n):
                                env[s] = a
                                if body(env)[side]:
                                    derived.add(a)
                            nxt = (cur | derived) if least else (cur & frozenset(derived))
                            if nxt == cur:
                                break
                            cur = nxt
                        pair.append(cur)
                        self.so_env.pop(f.var, None)
                    hit = (pair[0], pair[1])
                    self.cache[env_key] = hit
                e = env[term_slot]
                return (e in hit[0], e in hit[1])

            return fixpoint
        if k == LET:
            defn = self._compile(f.children[0], slots)
            # boolean values via the set-variable channel, nullary
            var = f.var
            body_holder = []

            def letc(env, defn=defn, var=var):
                pair = defn(env)
                old = self.so_env.get(("bool", var))
                self.so_env[("bool", var)] = pair
                out = body_holder[0](env)
                if old is None:
                    self.so_env.pop(("bool", var), None)
                else:
                    self.so_env[("bool", var)] = old
                return out

            body_holder.append(self._compile(f.children[1], slots))
            return letc
        if k == BVAR:
            var = f.var
            return lambda env, var=var: self.so_env[("bool", var)]
        raise FragmentError(f"model search cannot evaluate node kind {k!r}")


def formula_signature(f: Formula, extra: dict[str, int] | None = None) -> dict[str, int]:
    sig = relations_of(f)
    for name, ar in (extra or {}).items():
        sig.setdefault(name, ar)
    return dict(sorted(sig.items()))


class _Search:
    """Depth-first search over fact assignments in lexicographic order.

    True branches first, so the first model found is the least in the
    true-before-false order; partial-structure canonicity (elements must
    first appear in increasing contiguous order, with unused elements a
    suffix) prunes isomorphic duplicates.
    """

    def __init__(self, f: Formula, n: int, signature: dict[str, int],
                 deadline: float | None, node_budget: int | None = None):
        self.ev = IntervalEvaluator(f, n, signature)
        self.n = n
        self.sig = signature
        self.facts = self.ev.facts()
        self.deadline = deadline
        self.node_budget = node_budget
        self.nodes = 0
        self.use_count = [0] * n
        self.used_prefix = 0

    def _elements(self, i: int) -> tuple[int, ...]:
        return self.facts[i][1]

    def _set(self, i: int, state: int) -> None:
        rel, t = self.facts[i]
        self.ev.states[self.ev.fact_index(rel, t)] = state

    def _try_true(self, i: int) -> bool:
        """Contiguous-first-use canonicity check; applies the state on success."""
        t = self._elements(i)
        new = sorted({d for d in t if self.use_count[d] == 0})
        if new and new != list(range(self.used_prefix, self.used_prefix + len(new))):
            return False
        for d in t:
            self.use_count[d] += 1
        self.used_prefix += len(new)
        self._set(i, 1)
        return True

    def _undo_true(self, i: int) -> None:
        t = self._elements(i)
        for d in t:
            self.use_count[d] -= 1
        freed = {d for d in t if self.use_count[d] == 0}
        self.used_prefix -= len(freed)
        self._set(i, 2)

    def run(self, on_model) -> bool:
        """DFS; on_model(structure) returns True to stop the search."""
        return self._dfs(0, on_model)

    def _dfs(self, i: int, on_model) -> bool:
        self.nodes += 1
        if self.node_budget is not None and self.nodes > self.node_budget:
            raise BudgetExceededError("node budget exceeded")
        if self.deadline is not None and self.nodes % 512 == 0:
            if time.monotonic() > self.deadline:
                raise SearchTimeout(self.n - 1)
        lo, hi = self.ev.evaluate()
        if not hi:
            return False
        if i == len(self.facts):
            if lo and on_model(self._structure()):
                return True
            return False
        if self._try_true(i):
            if self._dfs(i + 1, on_model):
                return True
            self._undo_true(i)
        self._set(i, 0)
        if self._dfs(i + 1, on_model):
            return True
        self._set(i, 2)
        return False

    def _structure(self) -> Structure:
        dom = [f"e{j}" for j in range(self.n)]
        rels: dict[str, tuple[int, set]] = {r: (ar, set()) for r, ar in self.sig.items()}
        for rel, t in self.facts:
            if self.ev.states[self.ev.fact_index(rel, t)] == 1:
                rels[rel][1].add(tuple(dom[d] for d in t))
        return Structure(frozenset(dom),
                         {r: (ar, frozenset(ts)) for r, (ar, ts) in rels.items()})


def bounded_model_search(f: Formula, max_size: int,
                         signature: dict[str, int] | None = None,
                         wall_clock_ms: int | None = None) -> SatResult:
    """Iterative deepening over domain sizes with verified witnesses.

    Complete up to max_size: returns the minimal-size witness (least in
    the canonical fact order) or UNSAT_UP_TO(max_size).  A wall-clock
    timeout raises SearchTimeout carrying the largest completed size.
    """
    sentence = existential_closure(f)
    if signature is not None:
        sig = dict(sorted(signature.items()))  # the searchable fact space, as given
    else:
        sig = formula_signature(sentence)
    deadline = None
    if wall_clock_ms is not None:
        deadline = time.monotonic() + wall_clock_ms / 1000.0
    found: list[Structure] = []

    def on_model(m: Structure) -> bool:
        if eval_fo(m, sentence):  # the verification gate
            found.append(m)
            return True
        return False

    for n in range(1, max_size + 1):
        search = _Search(sentence, n, sig, deadline)
        if search.run(on_model):
            return SatResult("SAT", witness=found[0],
                             trace={"size": n, "branch": "direct"})
    return SatResult("UNSAT_UP_TO", bound=max_size)


# --- negation depth 1: a complete decision procedure ----------------------------

def _positive_info(f: Formula) -> tuple[int, set[str]]:
    """Count existential variables outside negations; relations occurring
    positively (outside any negation)."""
    count = [0]
    rels: set[str] = set()

    def rec(g: Formula, neg: bool) -> None:
        if g.kind == EXISTS and not neg:
            count[0] += len(g.bound)
        if g.kind == ATOM and not neg:
            rels.add(g.rel)
        if g.kind == NOT:
            rec(g.children[0], True)
            return
        for c in g.children:
            rec(c, neg)

    rec(f, False)
    return count[0], rels


def sat_negdepth1(f: Formula) -> SatResult:
    """Definitive satisfiability for unary-negation formulas of depth one.

    A satisfiable formula has a model over the existentially quantified
    elements whose facts use only positively occurring relations, so the
    bounded search is complete and UNSAT is final.
    """
    if not classify(f).unfo:
        raise FragmentError("sat_negdepth1 expects a unary-negation formula")
    if negation_depth(f) > 1:
        raise FragmentError("negation depth exceeds one")
    sentence = existential_closure(f)
    n_max, pos_rels = _positive_info(sentence)
    n_max = max(n_max, 1)
    # relations never occurring positively stay empty in a minimal model
    sig = {r: ar for r, ar in formula_signature(sentence).items() if r in pos_rels}
    res = bounded_model_search(sentence, n_max, signature=sig)
    if res.verdict == "SAT":
        return res
    return SatResult("UNSAT", trace={"bound": n_max})


# --- the full pipeline -----------------------------------------------------------

def sat_pipeline(f: Formula, budget: Budget | None = None) -> SatResult:
    """Alternate the direct search with the stitch-diagram modal branch.

    Witnesses from the modal branch are decoded from the Kripke encoding,
    stitched back into the original signature, and verified against the
    input sentence; candidates failing verification are skipped and the
    search continues.
    """
    budget = budget or Budget()
    sentence = existential_closure(f)
    if not classify(sentence).unfp:
        raise FragmentError("sat_pipeline expects a unary-negation fixpoint sentence")
    deadline = time.monotonic() + budget.wall_clock_ms / 1000.0
    trace: dict = {}
    ml_formula = None
    catalog = None
    try:
        tr = unfp_to_sunfp_full(sentence, budget.max_catalog_entries,
                                max_output_nodes=20000)
        catalog = tr.catalog
        trace["strong_form"] = print_formula(tr.strong_form)
        trace["sunfp"] = print_formula(tr.formula)
        mlmu = sunfp_to_mlmu(tr.formula)
        trace["mlmu"] = print_formula(mlmu)
        ml_formula = existential_closure(ml_to_unfo(mlmu))
    except (BudgetExceededError, FragmentError) as e:
        trace["ml_branch"] = f"disabled: {e}"
    sig = formula_signature(sentence)
    ml_sig = formula_signature(ml_formula) if ml_formula is not None else None
    completed = 0

    def direct_step(n: int) -> Structure | None:
        got: list[Structure] = []

        def on_model(m: Structure) -> bool:
            if eval_fo(m, sentence):
                got.append(m)
                return True
            return False

        search = _Search(sentence, n, sig, deadline)
        if search.run(on_model):
            return got[0]
        return None

    def ml_step(n: int) -> Structure | None:
        if ml_formula is None:
            return None
        got: list[Structure] = []

        def on_model(k: Structure) -> bool:
            diagram = kripke_decode(k, {name: catalog.ntypes[name].num_vars
                                        for name in catalog.ntypes})
            candidate = stitch(diagram, catalog.ntypes)
            if candidate.domain and eval_fo(candidate, sentence):
                got.append(candidate)
                return True
            return False

        search = _Search(ml_formula, n, ml_sig, deadline,
                         node_budget=budget.ml_step_nodes)
        try:
            if search.run(on_model):
                return got[0]
        except BudgetExceededError:
            trace.setdefault("ml_stalled_at", n)
            return None
        return None

    for n in range(1, budget.max_domain_size + 1):
        try:
            witness = direct_step(n)
        except SearchTimeout:
            return SatResult("UNSAT_UP_TO", bound=completed, trace=trace)
        if witness is not None:
            trace["branch"] = "direct"
            trace["size"] = n
            return SatResult("SAT", witness=witness, trace=trace)
        completed = n
        if "ml_stalled_at" not in trace:
            try:
                witness = ml_step(n)
            except SearchTimeout:
                return SatResult("UNSAT_UP_TO", bound=completed, trace=trace)
            if witness is not None:
                trace["branch"] = "mlmu"
                trace["size"] = n
                return SatResult("SAT", witness=witness, trace=trace)
    return SatResult("UNSAT_UP_TO", bound=completed, trace=trace)


# --- entailment -------------------------------------------------------------------

@dataclass(frozen=True)
class EntailmentResult:
    verdict: str                      # VALID_UP_TO | COUNTERMODEL
    bound: int | None = None
    structure: Structure | None = None
    assignment: dict[str, str] | None = None


def entails(phi: Formula, psi: Formula, budget: Budget | None = None) -> EntailmentResult:
    """Entailment via satisfiability of the marked difference sentence.

    Fresh unary markers name the shared free tuple; a model of the marked
    sentence yields a countermodel with the tuple decoded from the
    markers, verified against both formulas.
    """
    if free_fo_vars(phi) != free_fo_vars(psi):
        raise FragmentError("entails needs identical free-variable lists")
    xs = sorted(free_fo_vars(phi))
    sig = formula_signature(phi)
    sig.update(formula_signature(psi))
    marks = []
    for i, x in enumerate(xs, start=1):
        name = f"Arg{i}"
        while name in sig:
            name = name + "_"
        marks.append(name)
        sig[name] = 1
    marked_phi = Exists(xs, And(phi, *(Atom(m, x) for m, x in zip(marks, xs)))) \
        if xs else phi
    marked_psi = Exists(xs, And(psi, *(Atom(m, x) for m, x in zip(marks, xs)))) \
        if xs else psi
    sentence = And(marked_phi, Not(marked_psi))
    res = sat_pipeline(sentence, budget)
    if res.verdict != "SAT":
        return EntailmentResult("VALID_UP_TO", bound=res.bound)
    m = res.witness
    candidates = [dict(zip(xs, combo)) for combo in itertools.product(
        *(sorted(e for (e,) in m.tuples(mark)) for mark in marks))] if xs else [{}]
    for assignment in candidates:
        v = Valuation(fo=assignment)
        if eval_fo(m, phi, v) and not eval_fo(m, psi, v):  # verification gate
            reduct = Structure(m.domain, {r: t for r, t in m.relations.items()
                                          if r not in marks})
            return EntailmentResult("COUNTERMODEL", structure=reduct,
                                    assignment=assignment)
    raise AssertionError("marked witness failed to yield a verified countermodel")
