"""Greatest-fixpoint checkers for bisimulation notions.

Global two-way bisimulation on Kripke structures (forward, backward and
jump moves), its bounded l-round variant, and UN-bisimulation of width k,
whose moves are partial homomorphisms on sets of at most k elements.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

from .structures import Structure, StructureError, find_homomorphisms, is_homomorphism


@dataclass(frozen=True)
class PairRelation:
    """A certified relation between the domains of two fixed structures."""

    tag: str                                  # global-two-way | un-width-k | un-full
    pairs: frozenset[tuple[str, str]]
    k: int | None = None
    signature: tuple[str, ...] | None = None  # restriction used, if any

    def contains(self, a: str, b: str) -> bool:
        return (a, b) in self.pairs

    @property
    def nonempty(self) -> bool:
        return bool(self.pairs)

    def to_json(self) -> str:
        return json.dumps({"tag": self.tag, "k": self.k,
                           "signature": sorted(self.signature) if self.signature else None,
                           "pairs": sorted(map(list, self.pairs))}, sort_keys=True)


def _check_kripke(k1: Structure, k2: Structure) -> None:
    # label vocabularies need not be equal: an absent label reads as empty
    for s in (k1, k2):
        for name, (ar, _) in s.relations.items():
            if ar > 2:
                raise StructureError(f"Kripke structure has non-binary relation {name}")


def _labels(s: Structure) -> dict[str, frozenset[str]]:
    out = {}
    for e in s.domain:
        out[e] = frozenset(n for n, (ar, ts) in s.relations.items()
                           if ar == 1 and (e,) in ts)
    return out


def _steps(s: Structure):
    succ: dict[str, dict[str, set[str]]] = {}
    pred: dict[str, dict[str, set[str]]] = {}
    for name, (ar, ts) in s.relations.items():
        if ar != 2:
            continue
        succ[name] = {}
        pred[name] = {}
        for a, b in ts:
            succ[name].setdefault(a, set()).add(b)
            pred[name].setdefault(b, set()).add(a)
    return succ, pred


def _local_ok(a: str, b: str, z: set[tuple[str, str]],
              succ1, pred1, succ2, pred2, rels: set[str]) -> bool:
    for r in rels:
        for a2 in succ1.get(r, {}).get(a, ()):
            if not any((a2, b2) in z for b2 in succ2.get(r, {}).get(b, ())):
                return False
        for b2 in succ2.get(r, {}).get(b, ()):
            if not any((a2, b2) in z for a2 in succ1.get(r, {}).get(a, ())):
                return False
        for a2 in pred1.get(r, {}).get(a, ()):
            if not any((a2, b2) in z for b2 in pred2.get(r, {}).get(b, ())):
                return False
        for b2 in pred2.get(r, {}).get(b, ()):
            if not any((a2, b2) in z for a2 in pred1.get(r, {}).get(a, ())):
                return False
    return True

def _total(z: set[tuple[str, str]], k1: Structure, k2: Structure) -> bool:
    left = {a for a, _ in z}
    right = {b for _, b in z}
    return left == set(k1.domain) and right == set(k2.domain)


def global_bisim(k1: Structure, k2: Structure, two_way: bool = True,
                 global_moves: bool = True) -> PairRelation:
    """Maximal global two-way bisimulation between two Kripke structures.

    Starts from label-agreeing pairs, deletes pairs violating the forward,
    backward or inverse clauses until stable, then enforces the two
    totality clauses required by the jump moves.  An empty result means
    the structures are not bisimilar (two empty structures are).
    """
    _check_kripke(k1, k2)
    lab1, lab2 = _labels(k1), _labels(k2)
    succ1, pred1 = _steps(k1)
    succ2, pred2 = _steps(k2)
    rels = set(succ1) | set(succ2)
    if not two_way:
        pred1 = pred2 = {}
    z = {(a, b) for a in k1.domain for b in k2.domain if lab1[a] == lab2[b]}
    changed = True
    while changed:
        changed = False
        for (a, b) in sorted(z):
            if not _local_ok(a, b, z, succ1, pred1, succ2, pred2, rels):
                z.discard((a, b))
                changed = True
    if global_moves and not _total(z, k1, k2):
        z = set()
    return PairRelation("global-two-way" if two_way else "forward", frozenset(z))


def bounded_bisim(k1: Structure, a: str, k2: Structure, b: str, l: int) -> bool:
    """Whether the duplicating player survives l rounds from (a, b)."""
    _check_kripke(k1, k2)
    if a not in k1.domain or b not in k2.domain:
        raise StructureError("bounded_bisim got an element outside its structure")
    lab1, lab2 = _labels(k1), _labels(k2)
    succ1, pred1 = _steps(k1)
    succ2, pred2 = _steps(k2)
    rels = set(succ1) | set(succ2)
    z = {(x, y) for x in k1.domain for y in k2.domain if lab1[x] == lab2[y]}
    if (a, b) not in z:
        return False
    for _ in range(l):
        # one round: the jump move dies whenever some element is uncovered
        if not _total(z, k1, k2):
            return False
        z = {(x, y) for (x, y) in z
             if _local_ok(x, y, z, succ1, pred1, succ2, pred2, rels)}
        if (a, b) not in z:
            return False
    return True


def un_bisim_k(m: Structure, n: Structure, k: int,
               shared_signature: set[str] | None = None) -> PairRelation:
    """Maximal UN-bisimulation of width k.

    A pair (a, b) survives while every set X of at most k elements on
    either side admits a partial homomorphism into the other structure
    (over the shared signature, when given) that maps a to b if applicable
    and lands inside the current relation.
    """
    if k < 1:
        raise ValueError("width must be at least 1")
    if shared_signature is not None:
        keep = set(shared_signature)
        m = Structure(m.domain, {r: v for r, v in m.relations.items() if r in keep})
        n = Structure(n.domain, {r: v for r, v in n.relations.items() if r in keep})
    sig = sorted(set(m.relations) | set(n.relations))
    z: set[tuple[str, str]] = {(a, b) for a in m.domain for b in n.domain}
    subsets_m = _subsets(sorted(m.domain), k)
    subsets_n = _subsets(sorted(n.domain), k)
    infeasible: set = set()  # (direction, X, pinned source, pinned target)

    def ok(a: str, b: str, src: Structure, dst: Structure, subsets, direction: int,
           images: dict[str, frozenset[str]]) -> bool:
        for xs in subsets:
            pinned = a in xs
            key = (direction, xs, a if pinned else None, b if pinned else None)
            if key in infeasible:
                return False
            allowed = {e: images[e] for e in xs}
            if pinned:
                allowed[a] = allowed[a] & {b}
            if any(not s for s in allowed.values()) or not find_homomorphisms(
                    src.restrict(xs), dst, limit=1, allowed=allowed):
                infeasible.add(key)
                return False
        return True

    changed = True
    while changed:
        changed = False
        left_img = {a: frozenset(b for (x, b) in z if x == a) for a in m.domain}
        right_img = {b: frozenset(a for (a, y) in z if y == b) for b in n.domain}
        infeasible.clear()
        for (a, b) in sorted(z):
            fwd = ok(a, b, m, n, subsets_m, 0, left_img)
            bwd = fwd and ok(b, a, n, m, subsets_n, 1, right_img)
            if not (fwd and bwd):
                z.discard((a, b))
                changed = True
    tag = "un-full" if k >= max(len(m.domain), len(n.domain), 1) else "un-width-k"
    return PairRelation(tag, frozenset(z), k=k,
                        signature=tuple(sorted(shared_signature)) if shared_signature
                        is not None else None)


def _subsets(elems: list[str], k: int) -> list[tuple[str, ...]]:
    out: list[tuple[str, ...]] = []
    for size in range(1, min(k, len(elems)) + 1):
        out.extend(itertools.combinations(elems, size))
    return out


def un_bisimilar(m: Structure, n: Structure, k: int | None = None,
                 shared_signature: set[str] | None = None) -> bool:
    """Nonemptiness of the maximal UN-bisimulation (full width by default)."""
    if not m.domain and not n.domain:
        return True  # the empty relation between empty structures, by convention
    if not m.domain or not n.domain:
        return False
    if k is None:
        k = max(len(m.domain), len(n.domain))
    return un_bisim_k(m, n, k, shared_signature).nonempty


def check_un_homomorphism(m: Structure, n: Structure, h: dict[str, str],
                          pairs: tuple | None = None) -> bool:
    """h is a homomorphism and every (a, h(a)) is fully UN-bisimilar.

    `pairs` optionally pins a source tuple to a required image tuple.
    """
    if set(h) != set(m.domain):
        raise StructureError("check_un_homomorphism needs a total map")
    if not is_homomorphism(m, n, h):
        return False
    if pairs is not None:
        src, dst = pairs
        if tuple(h[x] for x in src) != tuple(dst):
            return False
    if not m.domain:
        return True
    k = max(len(m.domain), len(n.domain))
    z = un_bisim_k(m, n, k)
    return all(z.contains(a, h[a]) for a in m.domain)


def verify_pair_relation(rel: PairRelation, m: Structure, n: Structure) -> bool:
    """Re-check every pair's local condition independently of the fixpoint."""
    if rel.tag in ("global-two-way", "forward"):
        lab1, lab2 = _labels(m), _labels(n)
        succ1, pred1 = _steps(m)
        succ2, pred2 = _steps(n)
        if rel.tag == "forward":
            pred1 = pred2 = {}
        rels = set(succ1) | set(succ2)
        z = set(rel.pairs)
        if z and not _total(z, m, n):
            return False
        return all(lab1[a] == lab2[b] and
                   _local_ok(a, b, z, succ1, pred1, succ2, pred2, rels)
                   for (a, b) in z)
    mm, nn = m, n
    if rel.signature is not None:
        keep = set(rel.signature)
        mm = Structure(m.domain, {r: v for r, v in m.relations.items() if r in keep})
        nn = Structure(n.domain, {r: v for r, v in n.relations.items() if r in keep})
    k = rel.k or max(len(m.domain), len(n.domain), 1)
    z = set(rel.pairs)
    left_img = {a: frozenset(b for (x, b) in z if x == a) for a in mm.domain}
    right_img = {b: frozenset(a for (a, y) in z if y == b) for b in nn.domain}
    for (a, b) in z:
        for xs in _subsets(sorted(mm.domain), k):
            allowed = {e: left_img[e] for e in xs}
            if a in xs:
                allowed[a] = allowed[a] & {b}
            if not find_homomorphisms(mm.restrict(xs), nn, limit=1, allowed=allowed):
                return False
        for xs in _subsets(sorted(nn.domain), k):
            allowed = {e: right_img[e] for e in xs}
            if b in xs:
                allowed[b] = allowed[b] & {a}
            if not find_homomorphisms(nn.restrict(xs), mm, limit=1, allowed=allowed):
                return False
    return True
