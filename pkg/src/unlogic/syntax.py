"""Formula AST, concrete grammar, fragment classification, modal translation.

One immutable AST covers plain first-order logic, the unary-negation
fragments (with and without fixpoints), the "simple" guarded shape, the
let-extension with boolean definitions, and global two-way modal logic with
fixpoints.  Which fragment a formula belongs to is computed by inspection
(`classify`), never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

# Node kinds
TRUE = "true"
FALSE = "false"
ATOM = "atom"          # rel, terms
EQ = "eq"              # terms = (t1, t2)
SVAR = "svar"          # var = set variable name, terms = (t,)
BVAR = "bvar"          # var = boolean variable name
MVAR = "mvar"          # var = modal fixpoint variable name
PROP = "prop"          # rel = proposition letter (modal unary predicate)
NOT = "not"
AND = "and"
OR = "or"
EXISTS = "exists"      # bound = variable list
FORALL = "forall"
LFP = "lfp"            # var = X, bound = (x,), children = (body,), terms = (t,)
GFP = "gfp"
LET = "let"            # var = b, children = (definition, body)
DIA = "dia"            # rel = R, <R> f
DIAI = "diai"          # <R-> f
BOX = "box"            # [R] f
BOXI = "boxi"          # [R-] f
DIAG = "diag"          # <G> f
BOXG = "boxg"          # [G] f
MU = "mu"              # var = X
NU = "nu"

_MODAL_KINDS = frozenset({PROP, MVAR, DIA, DIAI, BOX, BOXI, DIAG, BOXG, MU, NU})
_FIXPOINT_KINDS = frozenset({LFP, GFP, MU, NU})


class FormulaError(ValueError):
    """Ill-formed formula: syntax, binding, or positivity problem."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)
        self.line = line
        self.col = col


class FragmentError(ValueError):
    """Operation applied to a formula outside the required fragment."""


@dataclass(frozen=True)
class Formula:
    kind: str
    children: tuple["Formula", ...] = ()
    rel: str | None = None
    terms: tuple[str, ...] = ()
    var: str | None = None
    bound: tuple[str, ...] = ()

    def __str__(self) -> str:
        return print_formula(self)

    def walk(self) -> Iterator["Formula"]:
        yield self
        for c in self.children:
            yield from c.walk()


# Constructors.  And/Or flatten nested nodes of the same kind so that
# `a & b & c` round-trips regardless of how the tree was built.

def Atom(rel: str, *terms: str) -> Formula:
    return Formula(ATOM, rel=rel, terms=tuple(terms))


def Eq(t1: str, t2: str) -> Formula:
    return Formula(EQ, terms=(t1, t2))


def SetAtom(x: str, t: str) -> Formula:
    return Formula(SVAR, var=x, terms=(t,))


def Not(f: Formula) -> Formula:
    return Formula(NOT, (f,))


def And(*fs: Formula) -> Formula:
    flat: list[Formula] = []
    for f in fs:
        flat.extend(f.children if f.kind == AND else (f,))
    if len(flat) == 1:
        return flat[0]
    return Formula(AND, tuple(flat))


def Or(*fs: Formula) -> Formula:
    flat: list[Formula] = []
    for f in fs:
        flat.extend(f.children if f.kind == OR else (f,))
    if len(flat) == 1:
        return flat[0]
    return Formula(OR, tuple(flat))


def Exists(variables, f: Formula) -> Formula:
    return Formula(EXISTS, (f,), bound=tuple(variables))


def Forall(variables, f: Formula) -> Formula:
    return Formula(FORALL, (f,), bound=tuple(variables))


def Lfp(x_set: str, x: str, body: Formula, t: str) -> Formula:
    return Formula(LFP, (body,), var=x_set, bound=(x,), terms=(t,))


def Gfp(x_set: str, x: str, body: Formula, t: str) -> Formula:
    return Formula(GFP, (body,), var=x_set, bound=(x,), terms=(t,))


def Let(b: str, definition: Formula, body: Formula) -> Formula:
    return Formula(LET, (definition, body), var=b)


TRUE_F = Formula(TRUE)
FALSE_F = Formula(FALSE)


# --- free variables ---------------------------------------------------------

def free_fo_vars(f: Formula) -> frozenset[str]:
    """Free first-order variables."""
    if f.kind in (ATOM, EQ):
        return frozenset(f.terms)
    if f.kind == SVAR:
        return frozenset(f.terms)
    if f.kind in (EXISTS, FORALL):
        return free_fo_vars(f.children[0]) - frozenset(f.bound)
    if f.kind in (LFP, GFP):
        return (free_fo_vars(f.children[0]) - frozenset(f.bound)) | frozenset(f.terms)
    out: frozenset[str] = frozenset()
    for c in f.children:
        out |= free_fo_vars(c)
    return out


def free_so_vars(f: Formula) -> frozenset[str]:
    """Free set variables (fixpoint predicates of lfp/gfp and mu/nu)."""
    if f.kind == SVAR or f.kind == MVAR:
        return frozenset({f.var})
    if f.kind in (LFP, GFP, MU, NU):
        return free_so_vars(f.children[0]) - {f.var}
    out: frozenset[str] = frozenset()
    for c in f.children:
        out |= free_so_vars(c)
    return out


def free_bool_vars(f: Formula) -> frozenset[str]:
    if f.kind == BVAR:
        return frozenset({f.var})
    if f.kind == LET:
        return free_bool_vars(f.children[0]) | (free_bool_vars(f.children[1]) - {f.var})
    out: frozenset[str] = frozenset()
    for c in f.children:
        out |= free_bool_vars(c)
    return out


def subformulas(f: Formula) -> Iterator[Formula]:
    return f.walk()


def relations_of(f: Formula) -> dict[str, int]:
    """Relation symbols used in f with their arities (modal R counts as binary)."""
    sig: dict[str, int] = {}
    for g in f.walk():
        if g.kind == ATOM:
            prev = sig.setdefault(g.rel, len(g.terms))
            if prev != len(g.terms):
                raise FormulaError(f"relation {g.rel} used with arities {prev} and {len(g.terms)}")
        elif g.kind == PROP:
            sig.setdefault(g.rel, 1)
        elif g.kind in (DIA, DIAI, BOX, BOXI):
            sig.setdefault(g.rel, 2)
    return sig


# --- tokenizer --------------------------------------------------------------

_KEYWORDS = {"true", "false", "exists", "forall", "lfp", "gfp", "let", "in", "mu", "nu"}
_PUNCT = {"(", ")", "[", "]", "<", ">", "&", "|", "!", "=", ",", ".", "-"}


@dataclass
class _Tok:
    kind: str   # 'ident', 'kw', or the punctuation itself ('->' included)
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "-" and i + 1 < n and text[i + 1] == ">":
            toks.append(_Tok("->", "->", line, col))
            i += 2
            col += 2
            continue
        if ch in _PUNCT:
            toks.append(_Tok(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_'"):
                j += 1
            word = text[i:j]
            toks.append(_Tok("kw" if word in _KEYWORDS else "ident", word, line, col))
            col += j - i
            i = j
            continue
        raise FormulaError(f"unexpected character {ch!r}", line, col)
    toks.append(_Tok("eof", "", line, col))
    return toks


# --- parser -----------------------------------------------------------------

class _Parser:
    """Recursive-descent parser for the ASCII grammar.

    Precedence (loosest to tightest): -> , | , & , prefix operators.
    exists/forall/mu/nu/let scope maximally to the right; ! and the
    modalities bind like prefix operators.
    """

    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0
        # binding environments: set vars bound by lfp/gfp, modal vars bound
        # by mu/nu, boolean vars bound by let
        self.so_scope: list[str] = []
        self.mu_scope: list[str] = []
        self.bool_scope: list[str] = []

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def take(self, kind: str | None = None, text: str | None = None) -> _Tok:
        tok = self.toks[self.pos]
        if kind is not None and tok.kind != kind:
            raise FormulaError(f"expected {text or kind}, found {tok.text or 'end of input'!r}",
                               tok.line, tok.col)
        self.pos += 1
        return tok

    def parse(self) -> Formula:
        f = self.parse_impl()
        tok = self.peek()
        if tok.kind != "eof":
            raise FormulaError(f"unexpected {tok.text!r} after formula", tok.line, tok.col)
        return f

    def parse_impl(self) -> Formula:
        lhs = self.parse_or()
        if self.peek().kind == "->":
            self.take("->")
            rhs = self.parse_impl()
            return Or(Not(lhs), rhs)   # a -> b desugars immediately
        return lhs

    def parse_or(self) -> Formula:
        parts = [self.parse_and()]
        while self.peek().kind == "|":
            self.take("|")
            parts.append(self.parse_and())
        return Or(*parts) if len(parts) > 1 else parts[0]

    def parse_and(self) -> Formula:
        parts = [self.parse_unary()]
        while self.peek().kind == "&":
            self.take("&")
            parts.append(self.parse_unary())
        return And(*parts) if len(parts) > 1 else parts[0]

    def parse_unary(self) -> Formula:
        tok = self.peek()
        if tok.kind == "!":
            self.take("!")
            return Not(self.parse_unary())
        if tok.kind == "<":
            return self.parse_diamond()
        if tok.kind == "[":
            nxt = self.peek(1)
            if nxt.kind == "kw" and nxt.text in ("lfp", "gfp"):
                return self.parse_fixpoint()
            return self.parse_box()
        if tok.kind == "kw" and tok.text in ("exists", "forall"):
            return self.parse_quantifier()
        if tok.kind == "kw" and tok.text in ("mu", "nu"):
            return self.parse_mu()
        if tok.kind == "kw" and tok.text == "let":
            return self.parse_let()
        return self.parse_atom()

    def parse_diamond(self) -> Formula:
        self.take("<")
        name = self.take("ident", "relation name").text
        inverse = False
        if self.peek().kind == "->":     # '<R->' tokenizes as '<' R '->'
            self.take("->")
            inverse = True
        elif self.peek().kind == "-":
            self.take("-")
            self.take(">")
            inverse = True
        else:
            self.take(">")
        body = self.parse_unary()
        if name == "G":
            if inverse:
                raise FormulaError("the global modality has no inverse")
            return Formula(DIAG, (body,))
        return Formula(DIAI if inverse else DIA, (body,), rel=name)

    def parse_box(self) -> Formula:
        self.take("[")
        name = self.take("ident", "relation name").text
        inverse = False
        if self.peek().kind == "-":
            self.take("-")
            inverse = True
        self.take("]")
        body = self.parse_unary()
        if name == "G":
            if inverse:
                raise FormulaError("the global modality has no inverse")
            return Formula(BOXG, (body,))
        return Formula(BOXI if inverse else BOX, (body,), rel=name)

    def parse_quantifier(self) -> Formula:
        kw = self.take("kw").text
        variables = []
        while self.peek().kind == "ident":
            variables.append(self._term(self.take("ident")))
        if not variables:
            tok = self.peek()
            raise FormulaError("quantifier needs at least one variable", tok.line, tok.col)
        if len(set(variables)) != len(variables):
            raise FormulaError(f"repeated variable in quantifier block {variables}")
        self.take(".")
        body = self.parse_impl()
        return Exists(variables, body) if kw == "exists" else Forall(variables, body)

    def parse_fixpoint(self) -> Formula:
        self.take("[")
        kw = self.take("kw").text
        x_set = self.take("ident", "fixpoint variable").text
        self.take(",")
        x = self._term(self.take("ident"))
        self.take(".")
        self.so_scope.append(x_set)
        body = self.parse_impl()
        self.so_scope.pop()
        self.take("]")
        self.take("(")
        t = self._term(self.take("ident"))
        self.take(")")
        _check_positive(body, x_set, kw)
        node = Lfp if kw == "lfp" else Gfp
        return node(x_set, x, body, t)

    def parse_mu(self) -> Formula:
        kw = self.take("kw").text
        x = self.take("ident", "fixpoint variable").text
        self.take(".")
        self.mu_scope.append(x)
        body = self.parse_impl()
        self.mu_scope.pop()
        _check_positive(body, x, kw)
        return Formula(MU if kw == "mu" else NU, (body,), var=x)

    def parse_let(self) -> Formula:
        self.take("kw")
        b = self.take("ident", "boolean variable").text
        self.take("=")
        definition = self.parse_impl_until_in()
        self.bool_scope.append(b)
        self.take("kw", "'in'")
        body = self.parse_impl()
        self.bool_scope.pop()
        if free_fo_vars(definition):
            raise FormulaError(
                f"let definition of {b} has free first-order variables "
                f"{sorted(free_fo_vars(definition))}")
        return Let(b, definition, body)

    def parse_impl_until_in(self) -> Formula:
        # the definition of a let extends until the matching 'in'
        return self.parse_impl()

    def parse_atom(self) -> Formula:
        tok = self.peek()
        if tok.kind == "(":
            self.take("(")
            f = self.parse_impl()
            self.take(")")
            return f
        if tok.kind == "kw" and tok.text == "true":
            self.take("kw")
            return TRUE_F
        if tok.kind == "kw" and tok.text == "false":
            self.take("kw")
            return FALSE_F
        if tok.kind == "ident":
            name = self.take("ident").text
            if self.peek().kind == "(":
                self.take("(")
                terms = [self._term(self.take("ident", "term"))]
                while self.peek().kind == ",":
                    self.take(",")
                    terms.append(self._term(self.take("ident", "term")))
                self.take(")")
                if name in self.so_scope:
                    if len(terms) != 1:
                        raise FormulaError(f"fixpoint variable {name} takes one argument",
                                           tok.line, tok.col)
                    return SetAtom(name, terms[0])
                return Atom(name, *terms)
            if self.peek().kind == "=":
                self.take("=")
                rhs = self._term(self.take("ident", "term"))
                return Eq(self._term_name(name, tok), rhs)
            # bare identifier: resolved by binding, not case
            if name in self.bool_scope:
                return Formula(BVAR, var=name)
            if name in self.mu_scope:
                return Formula(MVAR, var=name)
            return Formula(PROP, rel=name)
        raise FormulaError(f"expected a formula, found {tok.text or 'end of input'!r}",
                           tok.line, tok.col)

    def _term(self, tok: _Tok) -> str:
        return self._term_name(tok.text, tok)

    def _term_name(self, name: str, tok: _Tok) -> str:
        if not (name[0].islower() or name[0] == "_"):
            raise FormulaError(f"first-order variables must be lowercase: {name!r}",
                               tok.line, tok.col)
        if name in _KEYWORDS:
            raise FormulaError(f"{name!r} is reserved", tok.line, tok.col)
        return name


def _check_positive(body: Formula, x: str, kw: str) -> None:
    """x may occur only under an even number of negations in body."""

    def rec(f: Formula, parity: int) -> None:
        if (f.kind == SVAR or f.kind == MVAR) and f.var == x:
            if parity % 2 == 1:
                raise FormulaError(f"fixpoint variable {x} occurs negatively under {kw}")
            return
        if f.kind in (LFP, GFP, MU, NU) and f.var == x:
            return  # rebinding shadows
        if f.kind == NOT:
            rec(f.children[0], parity + 1)
            return
        for c in f.children:
            rec(c, parity)

    rec(body, 0)


def _rename_duplicate_binders(f: Formula) -> Formula:
    """Make every fixpoint/let binder bind a distinct name (alpha-renaming)."""
    used: set[str] = set()
    for g in f.walk():
        if g.kind in (LFP, GFP, MU, NU, LET):
            used.add(g.var)
        if g.kind in (SVAR, MVAR, BVAR):
            used.add(g.var)

    seen: set[str] = set()

    def fresh(name: str) -> str:
        i = 1
        while f"{name}{i}" in used or f"{name}{i}" in seen:
            i += 1
        return f"{name}{i}"

    def rename_refs(g: Formula, old: str, new: str, kinds: tuple[str, ...]) -> Formula:
        if g.kind in kinds and g.var == old:
            return Formula(g.kind, g.children, g.rel, g.terms, new, g.bound)
        if g.kind in (LFP, GFP, MU, NU, LET) and g.var == old:
            return g  # shadowed
        if not g.children:
            return g
        return Formula(g.kind, tuple(rename_refs(c, old, new, kinds) for c in g.children),
                       g.rel, g.terms, g.var, g.bound)

    def rec(g: Formula) -> Formula:
        children = tuple(rec(c) for c in g.children)
        g = Formula(g.kind, children, g.rel, g.terms, g.var, g.bound)
        if g.kind in (LFP, GFP, MU, NU, LET):
            if g.var in seen:
                new = fresh(g.var)
                seen.add(new)
                kinds = (BVAR,) if g.kind == LET else (SVAR, MVAR)
                if g.kind == LET:
                    # only the body is in scope of b
                    body = rename_refs(g.children[1], g.var, new, kinds)
                    return Formula(LET, (g.children[0], body), var=new)
                body = rename_refs(g.children[0], g.var, new, kinds)
                return Formula(g.kind, (body,), g.rel, g.terms, new, g.bound)
            seen.add(g.var)
        return g

    return rec(f)


def parse_formula(text: str) -> Formula:
    """Parse the ASCII grammar; binders are alpha-renamed to unique names."""
    f = _Parser(text).parse()
    return _rename_duplicate_binders(f)


# --- printer ----------------------------------------------------------------

_PREC_IMPL, _PREC_OR, _PREC_AND, _PREC_UNARY, _PREC_ATOM = 0, 1, 2, 3, 4


def print_formula(f: Formula) -> str:
    return _pp(f, _PREC_IMPL)


def _pp(f: Formula, ctx: int) -> str:
    k = f.kind
    if k == TRUE:
        return "true"
    if k == FALSE:
        return "false"
    if k == ATOM:
        return f"{f.rel}({', '.join(f.terms)})"
    if k == EQ:
        s = f"{f.terms[0]} = {f.terms[1]}"
        return f"({s})" if ctx >= _PREC_ATOM else s
    if k == SVAR:
        return f"{f.var}({f.terms[0]})"
    if k in (BVAR, MVAR):
        return f.var
    if k == PROP:
        return f.rel
    if k == NOT:
        return "!" + _pp(f.children[0], _PREC_UNARY)
    if k == AND:
        s = " & ".join(_pp(c, _PREC_AND) for c in f.children)
        return f"({s})" if ctx > _PREC_AND else s
    if k == OR:
        s = " | ".join(_pp(c, _PREC_OR) for c in f.children)
        return f"({s})" if ctx > _PREC_OR else s
    if k in (EXISTS, FORALL):
        kw = "exists" if k == EXISTS else "forall"
        s = f"{kw} {' '.join(f.bound)} . {_pp(f.children[0], _PREC_IMPL)}"
        return f"({s})" if ctx > _PREC_IMPL else s
    if k in (LFP, GFP):
        kw = "lfp" if k == LFP else "gfp"
        return f"[{kw} {f.var},{f.bound[0]} . {_pp(f.children[0], _PREC_IMPL)}]({f.terms[0]})"
    if k == LET:
        s = (f"let {f.var} = {_pp(f.children[0], _PREC_IMPL)} "
             f"in {_pp(f.children[1], _PREC_IMPL)}")
        return f"({s})" if ctx > _PREC_IMPL else s
    if k in (DIA, DIAI):
        arrow = f"<{f.rel}->" if k == DIAI else f"<{f.rel}>"
        return f"{arrow} {_pp(f.children[0], _PREC_UNARY)}"
    if k in (BOX, BOXI):
        arrow = f"[{f.rel}-]" if k == BOXI else f"[{f.rel}]"
        return f"{arrow} {_pp(f.children[0], _PREC_UNARY)}"
    if k == DIAG:
        return f"<G> {_pp(f.children[0], _PREC_UNARY)}"
    if k == BOXG:
        return f"[G] {_pp(f.children[0], _PREC_UNARY)}"
    if k in (MU, NU):
        kw = "mu" if k == MU else "nu"
        s = f"{kw} {f.var} . {_pp(f.children[0], _PREC_IMPL)}"
        return f"({s})" if ctx > _PREC_IMPL else s
    raise AssertionError(f"unknown kind {k}")


# --- alpha equivalence ------------------------------------------------------

def alpha_equivalent(f: Formula, g: Formula) -> bool:
    """Structural equality up to consistent renaming of bound variables."""

    def rec(a: Formula, b: Formula, env_a: dict[str, str], env_b: dict[str, str],
            counter: list[int]) -> bool:
        if a.kind != b.kind or a.rel != b.rel or len(a.children) != len(b.children):
            return False

        def tr(t: str, env: dict[str, str]) -> str:
            return env.get(t, t)

        if tuple(tr(t, env_a) for t in a.terms) != tuple(tr(t, env_b) for t in b.terms):
            return False
        if a.kind in (SVAR, MVAR, BVAR):
            return tr(a.var, env_a) == tr(b.var, env_b)
        ea, eb = env_a, env_b
        if a.kind in (EXISTS, FORALL, LFP, GFP):
            if len(a.bound) != len(b.bound):
                return False
            ea, eb = dict(env_a), dict(env_b)
            for va, vb in zip(a.bound, b.bound):
                counter[0] += 1
                canon = f"#{counter[0]}"
                ea[va] = canon
                eb[vb] = canon
        if a.kind in (LFP, GFP, MU, NU, LET):
            ea = dict(ea)
            eb = dict(eb)
            counter[0] += 1
            canon = f"#{counter[0]}"
            ea[a.var] = canon
            eb[b.var] = canon
            if a.kind == LET:
                # definition is outside the scope of the bound boolean
                return (rec(a.children[0], b.children[0], env_a, env_b, counter)
                        and rec(a.children[1], b.children[1], ea, eb, counter))
        return all(rec(ca, cb, ea, eb, counter)
                   for ca, cb in zip(a.children, b.children))

    return rec(f, g, {}, {}, [0])


# --- fragment classification ------------------------------------------------

@dataclass(frozen=True)
class FragmentSet:
    fo: bool
    unfo: bool
    unfp: bool
    sunfo: bool
    sunfp: bool
    ml: bool
    mlmu: bool
    unfolet: bool

    def names(self) -> tuple[str, ...]:
        order = ["fo", "unfo", "unfp", "sunfo", "sunfp", "ml", "mlmu", "unfolet"]
        return tuple(n for n in order if getattr(self, n))


_FO_KINDS = frozenset({TRUE, FALSE, ATOM, EQ, NOT, AND, OR, EXISTS, FORALL})
_UNFO_KINDS = frozenset({TRUE, FALSE, ATOM, EQ, NOT, AND, OR, EXISTS})
_UNFP_KINDS = _UNFO_KINDS | frozenset({LFP, GFP, SVAR})
_UNFOLET_KINDS = _UNFO_KINDS | frozenset({LET, BVAR})
_ML_KINDS = frozenset({TRUE, FALSE, PROP, NOT, AND, OR, DIA, DIAI, BOX, BOXI, DIAG, BOXG})
_MLMU_KINDS = _ML_KINDS | frozenset({MU, NU, MVAR})


def _kinds_of(f: Formula) -> frozenset[str]:
    return frozenset(g.kind for g in f.walk())


def _negations_unary(f: Formula) -> bool:
    return all(len(free_fo_vars(g.children[0])) <= 1
               for g in f.walk() if g.kind == NOT)


def _fixpoints_parameter_free(f: Formula) -> bool:
    return all(free_fo_vars(g.children[0]) <= frozenset(g.bound)
               for g in f.walk() if g.kind in (LFP, GFP))


def _is_sunfp(f: Formula, allow_fixpoints: bool) -> bool:
    """The simple guarded shape: everything pivots on at most one variable."""
    k = f.kind
    if k in (TRUE, FALSE, PROP):
        return k != PROP  # propositions are modal syntax, not sUNFP
    if k == ATOM:
        return len(f.terms) == 1
    if k == SVAR:
        return allow_fixpoints
    if k == NOT:
        return len(free_fo_vars(f)) <= 1 and _is_sunfp(f.children[0], allow_fixpoints)
    if k in (AND, OR):
        return (len(free_fo_vars(f)) <= 1
                and all(_is_sunfp(c, allow_fixpoints) for c in f.children))
    if k in (LFP, GFP):
        if not allow_fixpoints:
            return False
        return (free_fo_vars(f.children[0]) <= frozenset(f.bound)
                and _is_sunfp(f.children[0], allow_fixpoints))
    if k == EXISTS:
        body = f.children[0]
        bound = set(f.bound)
        if len(f.bound) == 1 and free_fo_vars(body) <= bound:
            if _is_sunfp(body, allow_fixpoints):
                return True
        return _is_guarded_block(f, allow_fixpoints)
    return False


def _is_guarded_block(f: Formula, allow_fixpoints: bool) -> bool:
    """exists y1..yn . R(y1..yn) & [yi = x] & conjuncts with one free var each.

    The guard is a single relational atom whose distinct arguments are
    exactly the quantified variables.  A block quantifying one variable may
    omit the guard (its unary atoms already act as one-variable conjuncts).
    """
    if f.kind != EXISTS:
        return False
    bound = set(f.bound)
    body = f.children[0]
    conj = list(body.children) if body.kind == AND else [body]
    wide = [c for c in conj if c.kind == ATOM and len(c.terms) > 1]
    guard: Formula | None = None
    if len(wide) > 1:
        return False
    if len(wide) == 1:
        guard = wide[0]
        if len(set(guard.terms)) != len(guard.terms) or set(guard.terms) != bound:
            return False
    else:
        unary_spanning = [c for c in conj if c.kind == ATOM and set(c.terms) == bound]
        if unary_spanning:
            guard = unary_spanning[0]
        elif len(bound) != 1:
            return False
    pins = 0
    for c in conj:
        if c is guard:
            continue
        if c.kind == EQ:
            ts = set(c.terms)
            inside = ts & bound
            outside = ts - bound
            if len(ts) == 2 and len(inside) == 1 and len(outside) == 1:
                pins += 1
                continue
            return False
        fv = free_fo_vars(c)
        if len(fv) > 1 or not fv <= bound:
            return False
        if not _is_sunfp(c, allow_fixpoints):
            return False
    return pins <= 1 and len(free_fo_vars(f)) <= 1


def classify(f: Formula) -> FragmentSet:
    """Grammar membership for every supported fragment, computed by inspection."""
    kinds = _kinds_of(f)
    neg_unary = _negations_unary(f)
    fo = kinds <= _FO_KINDS
    unfo = kinds <= _UNFO_KINDS and neg_unary
    unfp = (kinds <= _UNFP_KINDS and neg_unary and _fixpoints_parameter_free(f))
    unfolet = kinds <= _UNFOLET_KINDS and neg_unary
    ml = kinds <= _ML_KINDS
    mlmu = kinds <= _MLMU_KINDS
    sunfp = unfp and _is_sunfp(f, allow_fixpoints=True)
    sunfo = unfo and sunfp and _is_sunfp(f, allow_fixpoints=False)
    return FragmentSet(fo=fo, unfo=unfo, unfp=unfp, sunfo=sunfo, sunfp=sunfp,
                       ml=ml, mlmu=mlmu, unfolet=unfolet)


# --- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    negation_depth: int
    alternation_free: bool


def negation_depth(f: Formula) -> int:
    return max((negation_depth(c) for c in f.children), default=0) + (1 if f.kind == NOT else 0)


def _fixpoint_dependencies(f: Formula) -> tuple[dict[str, str], dict[str, set[str]]]:
    """Kinds (least/greatest) and dependency edges between fixpoint variables.

    There is an edge X -> Y whenever Y occurs, free or bound, inside the
    fixpoint definition of X.  Assumes distinct binder names (guaranteed
    by parse-time alpha-renaming).
    """
    kind_of: dict[str, str] = {}
    edges: dict[str, set[str]] = {}

    def vars_in(g: Formula) -> set[str]:
        out = set()
        for h in g.walk():
            if h.kind in (SVAR, MVAR):
                out.add(h.var)
            if h.kind in _FIXPOINT_KINDS:
                out.add(h.var)
        return out

    for g in f.walk():
        if g.kind in _FIXPOINT_KINDS:
            kind_of[g.var] = "least" if g.kind in (LFP, MU) else "greatest"
            edges[g.var] = vars_in(g.children[0])
    # keep only edges into known fixpoint variables
    for x in edges:
        edges[x] = {y for y in edges[x] if y in kind_of}
    return kind_of, edges


def _sccs(edges: dict[str, set[str]]) -> list[set[str]]:
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[set[str]] = []
    counter = [0]

    def strongconnect(v: str) -> None:
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        for w in sorted(edges.get(v, ())):
            if w not in index:
                strongconnect(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = set()
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.add(w)
                if w == v:
                    break
            out.append(comp)

    for v in sorted(edges):
        if v not in index:
            strongconnect(v)
    return out


def alternation_free(f: Formula) -> bool:
    """No dependency cycle mixes a least and a greatest fixpoint variable.

    A strongly connected component with two variable kinds always contains
    such a cycle, and a mixed cycle always sits inside one component.
    """
    kind_of, edges = _fixpoint_dependencies(f)
    return all(len({kind_of[v] for v in comp}) < 2 for comp in _sccs(edges))


def metrics(f: Formula) -> Metrics:
    return Metrics(negation_depth=negation_depth(f), alternation_free=alternation_free(f))


# --- modal translation (to first-order form) --------------------------------

def ml_to_unfo(f: Formula, pivot: str = "x") -> Formula:
    """Translate a global two-way modal formula to its first-order form.

    Diamonds become existential steps along the relation, inverse diamonds
    use reversed atoms, the global modality quantifies over everything, and
    mu/nu become lfp/gfp over a fresh variable.  Boxes translate through
    their диamond duals.
    """
    frags = classify(f)
    if not frags.mlmu:
        raise FragmentError("ml_to_unfo expects a global two-way modal formula")

    pool = [pivot] + [v for v in "yzuvw" if v != pivot]
    used = [0]

    def fresh() -> str:
        used[0] += 1
        if used[0] < len(pool):
            return pool[used[0]]
        return f"{pivot}{used[0] - len(pool) + 1}"

    def rec(g: Formula, x: str) -> Formula:
        k = g.kind
        if k == TRUE or k == FALSE:
            return g
        if k == PROP:
            return Atom(g.rel, x)
        if k == MVAR:
            return SetAtom(g.var, x)
        if k == NOT:
            return Not(rec(g.children[0], x))
        if k == AND:
            return And(*(rec(c, x) for c in g.children))
        if k == OR:
            return Or(*(rec(c, x) for c in g.children))
        if k == DIA:
            y = fresh()
            return Exists([y], And(Atom(g.rel, x, y), rec(g.children[0], y)))
        if k == DIAI:
            y = fresh()
            return Exists([y], And(Atom(g.rel, y, x), rec(g.children[0], y)))
        if k == BOX:
            y = fresh()
            return Not(Exists([y], And(Atom(g.rel, x, y), Not(rec(g.children[0], y)))))
        if k == BOXI:
            y = fresh()
            return Not(Exists([y], And(Atom(g.rel, y, x), Not(rec(g.children[0], y)))))
        if k == DIAG:
            y = fresh()
            return Exists([y], rec(g.children[0], y))
        if k == BOXG:
            y = fresh()
            return Not(Exists([y], Not(rec(g.children[0], y))))
        if k in (MU, NU):
            y = fresh()
            body = rec(g.children[0], y)
            node = Lfp if k == MU else Gfp
            return node(g.var, y, body, x)
        raise AssertionError(k)

    return rec(f, pivot)
