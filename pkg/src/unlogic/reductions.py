"""Boolean formulas, the lexicographically maximal solution oracle, and the
complexity reductions used as cross-validation generators.

The let-chain reduction answers the last bit of the lexicographically
maximal satisfying assignment over a fixed two-element structure; the
bit-string reduction encodes all length-d strings as labeled elements and
compares them with an explicit lexicographic comparator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .structures import Structure, three_clique
from .syntax import (BVAR, And, Atom, Eq, Exists, Formula, FragmentError, Let,
                     Not, Or, TRUE_F, FALSE_F)


@dataclass(frozen=True)
class BoolFormula:
    """AST over variables x1..xn with not/and/or."""

    op: str                      # var | not | and | or | const
    var: int = 0                 # 1-based index for op == var
    args: tuple["BoolFormula", ...] = ()
    value: bool = False          # for op == const

    def variables(self) -> set[int]:
        if self.op == "var":
            return {self.var}
        out: set[int] = set()
        for a in self.args:
            out |= a.variables()
        return out

    def evaluate(self, assignment: tuple[int, ...]) -> bool:
        if self.op == "const":
            return self.value
        if self.op == "var":
            return bool(assignment[self.var - 1])
        if self.op == "not":
            return not self.args[0].evaluate(assignment)
        if self.op == "and":
            return all(a.evaluate(assignment) for a in self.args)
        return any(a.evaluate(assignment) for a in self.args)

    def __str__(self) -> str:
        if self.op == "const":
            return "true" if self.value else "false"
        if self.op == "var":
            return f"x{self.var}"
        if self.op == "not":
            return f"!{self._wrap(self.args[0])}"
        sep = " & " if self.op == "and" else " | "
        return sep.join(self._wrap(a) for a in self.args)

    def _wrap(self, a: "BoolFormula") -> str:
        if a.op in ("and", "or"):
            return f"({a})"
        return str(a)


def bvar(i: int) -> BoolFormula:
    return BoolFormula("var", var=i)


def bnot(a: BoolFormula) -> BoolFormula:
    return BoolFormula("not", args=(a,))


def band(*args: BoolFormula) -> BoolFormula:
    return args[0] if len(args) == 1 else BoolFormula("and", args=tuple(args))


def bor(*args: BoolFormula) -> BoolFormula:
    return args[0] if len(args) == 1 else BoolFormula("or", args=tuple(args))


BTRUE = BoolFormula("const", value=True)
BFALSE = BoolFormula("const", value=False)


def parse_bool_formula(text: str) -> BoolFormula:
    """Grammar: x1, !f, f & g, f | g, true, false, parentheses."""
    tokens: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()!&|":
            tokens.append(ch)
            i += 1
            continue
        j = i
        while j < len(text) and (text[j].isalnum() or text[j] == "_"):
            j += 1
        if j == i:
            raise FragmentError(f"unexpected character {ch!r} in boolean formula")
        tokens.append(text[i:j])
        i = j
    pos = [0]

    def peek() -> str | None:
        return tokens[pos[0]] if pos[0] < len(tokens) else None

    def take(expected: str | None = None) -> str:
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise FragmentError(f"expected {expected or 'a token'}, found {tok!r}")
        pos[0] += 1
        return tok

    def parse_or() -> BoolFormula:
        parts = [parse_and()]
        while peek() == "|":
            take("|")
            parts.append(parse_and())
        return bor(*parts)

    def parse_and() -> BoolFormula:
        parts = [parse_unary()]
        while peek() == "&":
            take("&")
            parts.append(parse_unary())
        return band(*parts)

    def parse_unary() -> BoolFormula:
        tok = peek()
        if tok == "!":
            take("!")
            return bnot(parse_unary())
        if tok == "(":
            take("(")
            f = parse_or()
            take(")")
            return f
        tok = take()
        if tok == "true":
            return BTRUE
        if tok == "false":
            return BFALSE
        if tok.startswith("x") and tok[1:].isdigit():
            return bvar(int(tok[1:]))
        raise FragmentError(f"expected a variable like x1, found {tok!r}")

    out = parse_or()
    if pos[0] != len(tokens):
        raise FragmentError(f"unexpected {tokens[pos[0]]!r} after boolean formula")
    return out


def lexmax_sat(f: BoolFormula, n: int | None = None,
               limit: int = 22) -> tuple[int, ...] | None:
    """The lexicographically maximal satisfying assignment, x1 most significant.

    Enumerates assignments in descending order; None when unsatisfiable.
    """
    if n is None:
        n = max(f.variables(), default=0)
    n = max(n, 1)
    if n > limit:
        raise FragmentError(f"{n} variables exceed the enumeration budget of {limit}")
    for bits in itertools.product((1, 0), repeat=n):
        if f.evaluate(bits):
            return bits
    return None


def lexmax_bit(f: BoolFormula, k: int, n: int | None = None) -> bool:
    """Whether bit k of the lexicographically maximal solution is 1."""
    best = lexmax_sat(f, n)
    return best is not None and bool(best[k - 1])


def _to_fo_literals(f: BoolFormula, pos, neg) -> Formula:
    """Map boolean literals through pos/neg after pushing negations down."""

    def rec(g: BoolFormula, negated: bool) -> Formula:
        if g.op == "const":
            val = g.value != negated
            return TRUE_F if val else FALSE_F
        if g.op == "var":
            return neg(g.var) if negated else pos(g.var)
        if g.op == "not":
            return rec(g.args[0], not negated)
        if (g.op == "and") != negated:
            return And(*(rec(a, negated) for a in g.args))
        return Or(*(rec(a, negated) for a in g.args))

    return rec(f, False)


def thm53_reduction(f: BoolFormula, n: int | None = None) -> tuple[Structure, Formula]:
    """The let-chain over a fixed two-element structure.

    Boolean definitions name, bit by bit, the lexicographically maximal
    satisfying assignment; evaluating the chain answers whether the last
    bit is 1.
    """
    if n is None:
        n = max(f.variables(), default=1)
    n = max(n, 1)
    if n > 12:
        raise FragmentError("let-chain reduction is budgeted to 12 variables")
    m = Structure.make(["e0", "e1"], {"T": [["e1"]]})
    xs = [f"x{i}" for i in range(1, n + 1)]
    hat = _to_fo_literals(f, lambda i: Atom("T", xs[i - 1]),
                          lambda i: Not(Atom("T", xs[i - 1])))

    def psi_prime(i: int) -> Formula:
        # T(x_j) <-> b_j for j < i, then T(x_i)
        links = []
        for j in range(1, i):
            b = Formula(BVAR, var=f"b{j}")
            links.append(Or(And(Atom("T", xs[j - 1]), b),
                            And(Not(Atom("T", xs[j - 1])), Not(b))))
        return Exists(xs, And(hat, *links, Atom("T", xs[i - 1])))

    formula = psi_prime(n)
    for i in range(n - 1, 0, -1):
        formula = Let(f"b{i}", psi_prime(i), formula)
    return m, formula


def _bit(j: int, i: int, d: int) -> bool:
    """Bit i (1-based, most significant first) of j in d bits."""
    return bool((j >> (d - i)) & 1)


def thm52_reduction(f: BoolFormula, n: int) -> tuple[Structure, Formula]:
    """Bit-string encoding: elements a_1..a_n carry all d-bit strings.

    Valid for n a power of two with d*d <= n and satisfiable f; the output
    formula holds exactly when bit d*d of the lexicographically maximal
    solution is 1.  Nested blocks use level-tagged variable names so that
    pinned pivots are never captured.
    """
    if n < 2 or n & (n - 1) != 0:
        raise FragmentError("n must be a power of two")
    if n > 16:
        raise FragmentError("bit-string reduction is budgeted to n <= 16")
    d = n.bit_length() - 1
    if d * d > n:
        raise FragmentError(f"bit d^2 = {d * d} does not exist among {n} variables")
    if lexmax_sat(f, n) is None:
        raise FragmentError("the designated-bit problem presumes a satisfiable input")

    elems = [f"a{j}" for j in range(1, n + 1)] + ["0", "1"]
    rels: dict[str, list] = {"Q": [["0"], ["1"]], "T": [["1"]]}
    for i in range(1, d + 1):
        rels[f"P{i}"] = [[f"a{j}"] for j in range(1, n + 1) if _bit(j - 1, i, d)]
    m = Structure.make(elems, rels, arities={f"P{i}": 1 for i in range(1, d + 1)})

    def guard_y(v: str) -> Formula:
        return Not(Atom("Q", v))

    def guard_x(v: str) -> Formula:
        return Atom("Q", v)

    def greater(y2: str, y1: str) -> Formula:
        """Bit-string of y2 lexicographically greater than that of y1."""
        cases = []
        for i in range(1, d + 1):
            same = [Or(And(Atom(f"P{j}", y1), Atom(f"P{j}", y2)),
                       And(Not(Atom(f"P{j}", y1)), Not(Atom(f"P{j}", y2))))
                    for j in range(1, i)]
            cases.append(And(*same, Not(Atom(f"P{i}", y1)), Atom(f"P{i}", y2)))
        return Or(*cases) if len(cases) > 1 else cases[0]

    def block(level: str, pin: tuple[int, str] | None,
              extra) -> Formula:
        """The quantified matrix at one nesting level: the encoded formula
        plus sort guards, subformula pins, and level-specific names."""
        ys = [f"y{k}{level}" for k in range(1, d + 1)]
        xs = [f"x{i}{level}" for i in range(d * d + 1, n + 1)]

        def pos_lit(i: int) -> Formula:
            if i <= d * d:
                k, j = divmod(i - 1, d)
                return Atom(f"P{j + 1}", ys[k])
            return Atom("T", f"x{i}{level}")

        hat = _to_fo_literals(f, pos_lit, lambda i: Not(pos_lit(i)))
        body = [hat]
        body += [guard_y(v) for v in ys]
        body += [guard_x(v) for v in xs]
        if pin is not None:
            body.append(Eq(ys[pin[0] - 1], pin[1]))
        body += extra(ys)
        return Exists(ys + xs, And(*body))

    chi_cache: dict[int, Formula] = {}

    def psi(i: int, pivot: str, level: str) -> Formula:
        return block(level, (i, pivot),
                     lambda ys: [chi(j, ys[j - 1]) for j in range(1, i)])

    def chi(i: int, pivot: str) -> Formula:
        if i not in chi_cache:
            w = f"w{i}"
            chi_cache[i] = And(psi(i, "__pivot__", f"u{i}"),
                               Not(Exists([w], And(guard_y(w),
                                                   greater(w, "__pivot__"),
                                                   psi(i, w, f"v{i}")))))
        return _rename_pivot(chi_cache[i], pivot)

    theta = block("", None,
                  lambda ys: [chi(i, ys[i - 1]) for i in range(1, d + 1)]
                  + [Atom(f"P{d}", ys[d - 1])])
    return m, theta


def _rename_pivot(f: Formula, pivot: str) -> Formula:
    if "__pivot__" in f.terms:
        terms = tuple(pivot if t == "__pivot__" else t for t in f.terms)
        f = Formula(f.kind, f.children, f.rel, terms, f.var, f.bound)
    if not f.children:
        return f
    return Formula(f.kind, tuple(_rename_pivot(c, pivot) for c in f.children),
                   f.rel, f.terms, f.var, f.bound)


def color_via_cq(g: Structure) -> bool:
    """3-colorability through the canonical conjunctive query on a 3-clique."""
    from .evaluate import eval_fo
    from .structures import canonical_query
    binary = [name for name, (ar, _) in g.relations.items() if ar == 2]
    rel = binary[0] if binary else "R"
    q = canonical_query(g if binary else g.with_relation(rel, 2, []))
    return eval_fo(three_clique(rel), q)


def brute_three_colorable(g: Structure) -> bool:
    """Independent oracle: try all colorings; loops are never colorable."""
    binary = [name for name, (ar, _) in g.relations.items() if ar == 2]
    edges = [t for name in binary for t in g.tuples(name)]
    nodes = sorted(g.domain)
    for coloring in itertools.product(range(3), repeat=len(nodes)):
        color = dict(zip(nodes, coloring))
        if all(color[a] != color[b] for a, b in edges):
            return True
    return not nodes
