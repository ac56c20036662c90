"""Finite relational structures and structure-to-structure constructions.

Covers the JSON interchange format, backtracking homomorphism search,
incidence-graph acyclicity, stitching of diagrams, the Kripke gadget
encoding and its inverse, the graph-of-a-structure construction and its
inverse, the zigzag product, and canonical conjunctive queries.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .syntax import And, Atom, Exists, Formula, TRUE_F


class StructureError(ValueError):
    """Malformed structure: arity mismatch, unknown element, duplicate name."""


class BudgetExceededError(RuntimeError):
    """A combinatorial construction exceeded its configured size cap."""


@dataclass(frozen=True)
class Structure:
    """A finite relational structure with named elements.

    Relations map a name to (arity, frozenset of element-name tuples).
    Instances are immutable; all iteration is over sorted names so that
    derived artifacts are byte-reproducible.
    """

    domain: frozenset[str]
    relations: dict[str, tuple[int, frozenset[tuple[str, ...]]]] = field(default_factory=dict)

    def __post_init__(self):
        for name, (arity, tuples) in self.relations.items():
            for t in tuples:
                if len(t) != arity:
                    raise StructureError(f"tuple {t} does not match arity {arity} of {name}")
                for e in t:
                    if e not in self.domain:
                        raise StructureError(f"unknown element {e!r} in relation {name}")

    @staticmethod
    def make(domain, relations: dict[str, list] | None = None,
             arities: dict[str, int] | None = None) -> "Structure":
        rels: dict[str, tuple[int, frozenset]] = {}
        for name, tuples in (relations or {}).items():
            tuples = [tuple(t) for t in tuples]
            if tuples:
                arity = len(tuples[0])
            elif arities and name in arities:
                arity = arities[name]
            else:
                raise StructureError(f"empty relation {name} needs an explicit arity")
            rels[name] = (arity, frozenset(tuples))
        for name, arity in (arities or {}).items():
            rels.setdefault(name, (arity, frozenset()))
        return Structure(frozenset(domain), rels)

    def arity(self, name: str) -> int:
        return self.relations[name][0]

    def tuples(self, name: str) -> frozenset[tuple[str, ...]]:
        if name not in self.relations:
            return frozenset()
        return self.relations[name][1]

    def has_fact(self, name: str, t: tuple[str, ...]) -> bool:
        return name in self.relations and t in self.relations[name][1]

    def facts(self) -> list[tuple[str, tuple[str, ...]]]:
        out = []
        for name in sorted(self.relations):
            for t in sorted(self.relations[name][1]):
                out.append((name, t))
        return out

    def signature(self) -> dict[str, int]:
        return {name: ar for name, (ar, _) in sorted(self.relations.items())}

    def with_relation(self, name: str, arity: int, tuples) -> "Structure":
        rels = dict(self.relations)
        rels[name] = (arity, frozenset(tuple(t) for t in tuples))
        return Structure(self.domain, rels)

    def restrict(self, elements) -> "Structure":
        """Induced substructure."""
        keep = frozenset(elements)
        rels = {name: (ar, frozenset(t for t in tuples if all(e in keep for e in t)))
                for name, (ar, tuples) in self.relations.items()}
        return Structure(keep, rels)

    def rename(self, mapping: dict[str, str]) -> "Structure":
        rels = {name: (ar, frozenset(tuple(mapping[e] for e in t) for t in tuples))
                for name, (ar, tuples) in self.relations.items()}
        return Structure(frozenset(mapping[e] for e in self.domain), rels)

    def canonical_key(self) -> str:
        """Serialized form after sorting, used for structural equality."""
        return json.dumps(
            {"domain": sorted(self.domain),
             "relations": {n: {"arity": ar, "tuples": sorted(map(list, ts))}
                           for n, (ar, ts) in sorted(self.relations.items())}},
            sort_keys=True)

    def same_as(self, other: "Structure") -> bool:
        """Equality of domain and facts (empty relations do not matter)."""
        if self.domain != other.domain:
            return False
        mine = {(n, t) for n, (ar, ts) in self.relations.items() for t in ts}
        theirs = {(n, t) for n, (ar, ts) in other.relations.items() for t in ts}
        return mine == theirs


def disjoint_union(a: Structure, b: Structure, tags=("0", "1")) -> Structure:
    ma = {e: f"{tags[0]}.{e}" for e in a.domain}
    mb = {e: f"{tags[1]}.{e}" for e in b.domain}
    ra = a.rename(ma)
    rb = b.rename(mb)
    rels: dict[str, tuple[int, frozenset]] = {}
    for name in sorted(set(ra.relations) | set(rb.relations)):
        ar = ra.relations[name][0] if name in ra.relations else rb.relations[name][0]
        rels[name] = (ar, ra.tuples(name) | rb.tuples(name))
    return Structure(ra.domain | rb.domain, rels)


# --- JSON interchange --------------------------------------------------------

def parse_structure(text: str) -> Structure:
    """Parse {"domain": [...], "relations": {name: [[...], ...]}}.

    An empty relation may be declared as {"arity": n, "tuples": []}.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise StructureError(f"invalid JSON: {e}") from e
    if not isinstance(data, dict) or "domain" not in data:
        raise StructureError("structure JSON needs a 'domain' list")
    domain = data["domain"]
    if len(set(domain)) != len(domain):
        raise StructureError("duplicate element in domain")
    rels: dict[str, tuple[int, frozenset]] = {}
    for name, body in (data.get("relations") or {}).items():
        if name in rels:
            raise StructureError(f"duplicate relation {name}")
        if isinstance(body, dict):
            arity = int(body["arity"])
            tuples = [tuple(t) for t in body.get("tuples", [])]
        else:
            tuples = [tuple(t) for t in body]
            if not tuples:
                raise StructureError(f"empty relation {name} needs an explicit arity")
            arity = len(tuples[0])
        for t in tuples:
            if len(t) != arity:
                raise StructureError(f"arity mismatch in {name}: {t}")
            for e in t:
                if e not in set(domain):
                    raise StructureError(f"unknown element {e!r} in relation {name}")
        rels[name] = (arity, frozenset(tuples))
    return Structure(frozenset(domain), rels)


def serialize_structure(m: Structure) -> str:
    return json.dumps(
        {"domain": sorted(m.domain),
         "relations": {n: sorted(map(list, ts)) if ts else {"arity": ar, "tuples": []}
                       for n, (ar, ts) in sorted(m.relations.items())}},
        sort_keys=True)


# --- homomorphisms ------------------------------------------------------------

def find_homomorphisms(a: Structure, b: Structure,
                       pin: dict[str, str] | None = None,
                       limit: int | None = None,
                       allowed: dict[str, frozenset[str] | set[str]] | None = None,
                       ) -> list[dict[str, str]]:
    """All homomorphisms a -> b extending pin, by backtracking search.

    `allowed` optionally restricts the candidate images of individual
    source elements.  The result list is complete up to `limit` and sorted
    by the deterministic search order (sorted source elements, sorted
    candidate targets).
    """
    pin = pin or {}
    for k, v in pin.items():
        if k not in a.domain:
            raise StructureError(f"pinned element {k!r} not in source domain")
        if v not in b.domain:
            raise StructureError(f"pinned image {v!r} not in target domain")
    order = sorted(a.domain)
    facts = a.facts()
    # facts checked as soon as their last element is assigned
    rank = {e: i for i, e in enumerate(order)}
    facts_by_last: dict[str, list[tuple[str, tuple[str, ...]]]] = {e: [] for e in order}
    for name, t in facts:
        if not t:
            continue
        last = max(t, key=lambda e: rank[e])
        facts_by_last[last].append((name, t))
    targets = sorted(b.domain)
    out: list[dict[str, str]] = []
    assignment: dict[str, str] = {}

    def candidates(e: str) -> list[str]:
        if e in pin:
            return [pin[e]]
        if allowed and e in allowed:
            return sorted(allowed[e])
        return targets

    def extend(i: int) -> bool:
        if i == len(order):
            out.append(dict(assignment))
            return limit is not None and len(out) >= limit
        e = order[i]
        for v in candidates(e):
            assignment[e] = v
            ok = all(b.has_fact(name, tuple(assignment[x] for x in t))
                     for name, t in facts_by_last[e])
            if ok and extend(i + 1):
                return True
            del assignment[e]
        return False

    extend(0)
    return out


def is_homomorphism(a: Structure, b: Structure, h: dict[str, str]) -> bool:
    if set(h) != set(a.domain):
        return False
    return all(b.has_fact(name, tuple(h[e] for e in t)) for name, t in a.facts())


# --- isomorphism and canonical forms -----------------------------------------

def canonical_form(m: Structure) -> str:
    """Lexicographically least serialization over all renamings to 0..n-1.

    Structures here are tiny, so brute force over permutations is fine.
    """
    elems = sorted(m.domain)
    best: str | None = None
    for perm in itertools.permutations(range(len(elems))):
        mapping = {e: str(perm[i]) for i, e in enumerate(elems)}
        key = m.rename(mapping).canonical_key()
        if best is None or key < best:
            best = key
    return best if best is not None else m.canonical_key()


def is_isomorphic(a: Structure, b: Structure) -> bool:
    if len(a.domain) != len(b.domain):
        return False
    if a.signature() != b.signature():
        af = {n: len(ts) for n, (ar, ts) in a.relations.items() if ts}
        bf = {n: len(ts) for n, (ar, ts) in b.relations.items() if ts}
        if af != bf:
            return False
    return canonical_form(a) == canonical_form(b)


# --- incidence graph and acyclicity -------------------------------------------

@dataclass(frozen=True)
class AcyclicityReport:
    l_acyclic: bool
    acyclic: bool
    girth: int | None            # length of a shortest incidence cycle
    repeated_element: bool       # some fact mentions an element twice
    witness_cycle: tuple | None  # alternating fact/element nodes of a shortest cycle


def incidence_acyclicity(m: Structure, l: int) -> AcyclicityReport:
    """Acyclicity of the fact-element incidence graph.

    l-acyclic means no incidence cycle shorter than 2l and no element
    repeated within one fact; acyclic means no incidence cycle at all.
    """
    facts = m.facts()
    repeated = any(len(set(t)) != len(t) for _, t in facts)
    nodes: list = [("f", i) for i in range(len(facts))] + [("e", e) for e in sorted(m.domain)]
    adj: dict = {v: set() for v in nodes}
    for i, (_, t) in enumerate(facts):
        for e in set(t):
            adj[("f", i)].add(("e", e))
            adj[("e", e)].add(("f", i))

    girth: int | None = None
    witness: tuple | None = None
    for root in nodes:
        dist = {root: 0}
        parent: dict = {root: None}
        queue = [root]
        qi = 0
        while qi < len(queue):
            u = queue[qi]
            qi += 1
            for w in sorted(adj[u]):
                if w not in dist:
                    dist[w] = dist[u] + 1
                    parent[w] = u
                    queue.append(w)
                elif parent[u] != w:
                    # cross edge closes a cycle through the BFS tree
                    length = dist[u] + dist[w] + 1
                    if girth is None or length < girth:
                        girth = length
                        pu, pw = [], []
                        x = u
                        while x is not None:
                            pu.append(x)
                            x = parent[x]
                        x = w
                        while x is not None:
                            pw.append(x)
                            x = parent[x]
                        witness = tuple(pu[::-1] + pw)
    has_cycle = girth is not None
    l_acyclic = not repeated and (girth is None or girth >= 2 * l)
    return AcyclicityReport(l_acyclic=l_acyclic, acyclic=not repeated and not has_cycle,
                            girth=girth, repeated_element=repeated, witness_cycle=witness)


# --- neighborhood types and stitching ----------------------------------------

def stitch(diagram: Structure, ntypes: dict) -> Structure:
    """Replace each R_tau-fact of the diagram by a copy of tau's atoms.

    `ntypes` maps diagram relation names to NeighborhoodType values.
    """
    rels: dict[str, tuple[int, set]] = {}
    for name, (ar, tuples) in diagram.relations.items():
        if name not in ntypes:
            raise StructureError(f"diagram relation {name} has no neighborhood type")
        tau = ntypes[name]
        if len(tau.variables) != ar:
            raise StructureError(f"type for {name} has {len(tau.variables)} variables, "
                                 f"relation has arity {ar}")
        for t in tuples:
            for rel, positions in tau.atoms:
                rels.setdefault(rel, (len(positions), set()))
                rels[rel][1].add(tuple(t[i] for i in positions))
    return Structure(diagram.domain,
                     {n: (ar, frozenset(ts)) for n, (ar, ts) in rels.items()})


# --- Kripke gadget encoding ---------------------------------------------------

def _rel_prop(name: str) -> str:
    return f"p_{name}"


def _pos_prop(i: int) -> str:
    return f"p_{i}"


KRIPKE_EDGE = "E"


def kripke_encode(m: Structure) -> Structure:
    """Replace every fact of arity >= 2 by a gadget in a Kripke structure.

    A fact R(a1..an) becomes a p_R node with children labeled p_1..p_n,
    each pointing at the corresponding element.  Unary facts stay as direct
    p_P labels on their element, which is equivalent under the modal
    translation and keeps models small.
    """
    for name in m.relations:
        if name.isdigit():
            raise StructureError("relation names must not be all digits "
                                 "(they would collide with position labels)")
    domain = set(m.domain)
    unary: dict[str, set] = {}
    edges: set[tuple[str, str]] = set()
    counter = 0
    for name, t in m.facts():
        if len(t) == 1:
            unary.setdefault(_rel_prop(name), set()).add(t[0])
            continue
        fact_node = f"{name}#{counter}"
        counter += 1
        domain.add(fact_node)
        unary.setdefault(_rel_prop(name), set()).add(fact_node)
        for i, e in enumerate(t, start=1):
            pos_node = f"{fact_node}.{i}"
            domain.add(pos_node)
            unary.setdefault(_pos_prop(i), set()).add(pos_node)
            edges.add((fact_node, pos_node))
            edges.add((pos_node, e))
    rels: dict[str, tuple[int, frozenset]] = {
        name: (1, frozenset((e,) for e in elems)) for name, elems in unary.items()}
    rels[KRIPKE_EDGE] = (2, frozenset(edges))
    return Structure(frozenset(domain), rels)


def kripke_decode(k: Structure, signature: dict[str, int] | None = None) -> Structure:
    """Invert the gadget encoding.

    The decoded domain is the set of nodes carrying no relation-marker and
    no position label; a fact R(a1..an) is read off whenever some p_R node
    has p_1..p_n children whose children are a1..an.  When `signature` is
    omitted, a relation counts as gadget-encoded iff some of its marker
    nodes has a position-labeled child, and its arity is the largest
    position label observed.
    """
    unary_names = {n for n, (ar, _) in k.relations.items() if ar == 1}
    labels: dict[str, set[str]] = {n: {t[0] for t in k.tuples(n)} for n in unary_names}
    pos_of = {n: int(n[2:]) for n in unary_names
              if n.startswith("p_") and n[2:].isdigit()}
    pos_nodes: set[str] = set()
    for n in pos_of:
        pos_nodes |= labels[n]
    rel_names = sorted(n[2:] for n in unary_names
                       if n.startswith("p_") and n not in pos_of)
    succ: dict[str, set[str]] = {e: set() for e in k.domain}
    for a, b in k.tuples(KRIPKE_EDGE):
        succ[a].add(b)

    def gadget_slots(node: str) -> dict[int, set[str]]:
        slots: dict[int, set[str]] = {}
        for child in succ[node]:
            for pname, i in pos_of.items():
                if child in labels[pname]:
                    slots.setdefault(i, set()).update(succ[child])
        return slots

    sig = dict(signature) if signature is not None else None
    gadget_arity: dict[str, int] = {}
    for r in rel_names:
        if sig is not None:
            if sig.get(r, 1) >= 2:
                gadget_arity[r] = sig[r]
        else:
            observed = [max(gadget_slots(u), default=0) for u in labels[_rel_prop(r)]]
            if observed and max(observed) > 0:
                gadget_arity[r] = max(observed)

    marker_nodes = set(pos_nodes)
    for r in gadget_arity:
        marker_nodes |= labels[_rel_prop(r)]
    carriers = {e for e in k.domain if e not in marker_nodes}

    rels: dict[str, tuple[int, set]] = {}
    for r in rel_names:
        if r in gadget_arity:
            arity = gadget_arity[r]
            rels.setdefault(r, (arity, set()))
            for node in sorted(labels[_rel_prop(r)]):
                slots = {i: {g for g in targets if g in carriers}
                         for i, targets in gadget_slots(node).items()}
                if any(i not in slots or not slots[i] for i in range(1, arity + 1)):
                    continue  # a damaged gadget contributes no fact
                for combo in itertools.product(
                        *(sorted(slots[i]) for i in range(1, arity + 1))):
                    rels[r][1].add(combo)
        else:
            rels.setdefault(r, (1, set()))
            rels[r][1].update((e,) for e in labels[_rel_prop(r)] if e in carriers)
    if sig:
        for r, ar in sig.items():
            rels.setdefault(r, (ar, set()))
    return Structure(frozenset(carriers),
                     {n: (ar, frozenset(ts)) for n, (ar, ts) in rels.items()})


# --- graph of a structure -----------------------------------------------------

def _nbhd_label(k_struct: Structure) -> str:
    parts = [f"{n}({','.join(t)})" for n, t in k_struct.facts()]
    return "nbhd[" + ";".join(parts) + "]"


def _proj_rel(i: int) -> str:
    return f"proj_{i}"


def graph_of_structure(m: Structure, k: int, strict: bool = False,
                       max_nodes: int = 200000) -> Structure:
    """The graph G_M: elements of M plus its k-neighborhoods (K, h).

    A k-neighborhood is a structure K on {1..k} over M's signature together
    with a homomorphism h into M; the node is labeled by K and connected to
    h(i) by proj_i edges.  By default only K whose every element occurs in
    some fact are enumerated; `strict` enumerates all K (with isolated
    elements), which explodes quickly and is capped by `max_nodes`.
    """
    sig = m.signature()
    base = [str(i) for i in range(1, k + 1)]
    all_facts: list[tuple[str, tuple[str, ...]]] = []
    for name, ar in sorted(sig.items()):
        for t in itertools.product(base, repeat=ar):
            all_facts.append((name, t))

    domain = set(m.domain)
    unary: dict[str, set[str]] = {}
    edges: set[tuple[str, str, int]] = set()
    for bits in itertools.product([False, True], repeat=len(all_facts)):
        chosen = [f for f, b in zip(all_facts, bits) if b]
        used = {e for _, t in chosen for e in t}
        if not strict and used != set(base):
            continue
        rels: dict[str, set] = {}
        for name, t in chosen:
            rels.setdefault(name, set()).add(t)
        kk = Structure(frozenset(base),
                       {name: (sig[name], frozenset(rels.get(name, set())))
                        for name in sig})
        label = _nbhd_label(kk)
        for h in find_homomorphisms(kk, m):
            node = f"{label}@" + ",".join(h[str(i)] for i in range(1, k + 1))
            if len(domain) >= max_nodes:
                raise BudgetExceededError(
                    f"graph_of_structure exceeded {max_nodes} nodes")
            domain.add(node)
            unary.setdefault(label, set()).add(node)
            for i in range(1, k + 1):
                edges.add((node, h[str(i)], i))
    rels_out: dict[str, tuple[int, frozenset]] = {
        name: (1, frozenset((e,) for e in elems)) for name, elems in unary.items()}
    for i in range(1, k + 1):
        rels_out[_proj_rel(i)] = (2, frozenset((a, b) for a, b, j in edges if j == i))
    return Structure(frozenset(domain), rels_out)


def _parse_nbhd_label(label: str, k: int, sig: dict[str, int]) -> Structure:
    body = label[len("nbhd["):-1]
    rels: dict[str, set] = {}
    if body:
        for part in body.split(";"):
            name, args = part.split("(")
            rels.setdefault(name, set()).add(tuple(args[:-1].split(",")))
    base = [str(i) for i in range(1, k + 1)]
    return Structure(frozenset(base),
                     {name: (sig.get(name, len(next(iter(ts)))), frozenset(ts))
                      for name, ts in rels.items()})


def hat_decode(g: Structure, k: int, signature: dict[str, int] | None = None) -> Structure:
    """Invert graph_of_structure: read facts back out of neighborhood nodes."""
    unary_names = {n for n, (ar, _) in g.relations.items() if ar == 1}
    labels: dict[str, set[str]] = {n: {t[0] for t in g.tuples(n)} for n in unary_names}
    carriers = {e for e in g.domain if not any(e in s for s in labels.values())}
    succ: dict[int, dict[str, set[str]]] = {}
    for i in range(1, k + 1):
        succ[i] = {}
        for a, b in g.tuples(_proj_rel(i)):
            succ[i].setdefault(a, set()).add(b)
    sig = dict(signature or {})
    rels: dict[str, tuple[int, set]] = {n: (ar, set()) for n, ar in sig.items()}
    for label in sorted(unary_names):
        if not label.startswith("nbhd["):
            continue
        kk = _parse_nbhd_label(label.split("@")[0] if "@" in label else label, k, sig)
        for node in sorted(labels[label]):
            for name, t in kk.facts():
                choices = []
                ok = True
                for e in t:
                    targets = succ[int(e)].get(node, set()) & carriers
                    if not targets:
                        ok = False
                        break
                    choices.append(sorted(targets))
                if not ok:
                    continue
                rels.setdefault(name, (len(t), set()))
                for combo in itertools.product(*choices):
                    rels[name][1].add(combo)
    return Structure(frozenset(carriers),
                     {n: (ar, frozenset(ts)) for n, (ar, ts) in rels.items()})


# --- zigzag product -----------------------------------------------------------

@dataclass(frozen=True)
class ZigzagProduct:
    structure: Structure
    pairs: tuple[tuple[str, str, str], ...]  # (product element, left, right)

    def projection_left(self) -> dict[str, str]:
        return {p: a for p, a, _ in self.pairs}

    def projection_right(self) -> dict[str, str]:
        return {p: b for p, _, b in self.pairs}


def zigzag_product(m: Structure, n: Structure, sigma: set[str], tau: set[str],
                   k: int) -> ZigzagProduct:
    """The amalgam over pairs that are width-k UN-bisimilar in the shared signature.

    Shared relations are interpreted product-wise; relations private to one
    side are copied from that coordinate.
    """
    from .bisim import un_bisim_k
    shared = set(sigma) & set(tau)
    z = un_bisim_k(m, n, k, shared_signature=shared)
    pairs = sorted(z.pairs)
    name_of = {(a, b): f"{a}|{b}" for a, b in pairs}
    domain = frozenset(name_of.values())
    rels: dict[str, tuple[int, set]] = {}

    def add(rel: str, ar: int, ts) -> None:
        rels.setdefault(rel, (ar, set()))
        rels[rel][1].update(ts)

    for rel in sorted(set(sigma) | set(tau)):
        in_m = rel in m.relations
        in_n = rel in n.relations
        ar = m.arity(rel) if in_m else (n.arity(rel) if in_n else None)
        if ar is None:
            continue
        add(rel, ar, [])
        for combo in itertools.product(pairs, repeat=ar):
            left = tuple(a for a, _ in combo)
            right = tuple(b for _, b in combo)
            if rel in shared:
                ok = m.has_fact(rel, left) and n.has_fact(rel, right)
            elif rel in sigma:
                ok = m.has_fact(rel, left)
            else:
                ok = n.has_fact(rel, right)
            if ok:
                add(rel, ar, [tuple(name_of[p] for p in combo)])
    structure = Structure(domain, {r: (ar, frozenset(ts)) for r, (ar, ts) in rels.items()})
    return ZigzagProduct(structure, tuple((name_of[(a, b)], a, b) for a, b in pairs))


# --- canonical conjunctive query ----------------------------------------------

def canonical_query(g: Structure) -> Formula:
    """One existential variable per node, one atom per edge of a digraph."""
    binary = [n for n, (ar, _) in g.relations.items() if ar == 2]
    if len(binary) != 1 or any(ar != 2 for _, (ar, _) in g.relations.items()):
        raise StructureError("canonical_query expects a structure with one binary relation")
    rel = binary[0]
    nodes = sorted(g.domain)
    var = {e: f"x{i + 1}" for i, e in enumerate(nodes)}
    atoms = [Atom(rel, var[a], var[b]) for a, b in sorted(g.tuples(rel))]
    body = And(*atoms) if atoms else TRUE_F
    if not nodes:
        return TRUE_F
    return Exists([var[e] for e in nodes], body)


def three_clique(rel: str = "R") -> Structure:
    """K3 without self-loops, edges in both directions."""
    nodes = ["c1", "c2", "c3"]
    edges = [(a, b) for a in nodes for b in nodes if a != b]
    return Structure.make(nodes, {rel: edges})
