"""Lexer, parser and pretty-printer for nerve queries.

Grammar (keywords case-insensitive)::

    file     := query*
    query    := NAME '=' stage ('then' stage)*
    stage    := or_expr ('@' NUMBER)?
    or_expr  := and_expr ('or' and_expr)*
    and_expr := unary ('and' unary)*
    unary    := 'not' unary | '(' or_expr ')' | atom
    atom     := IDENT '(' arg (',' arg)? ')'

``then`` only separates top-level stages. A new query starts wherever an
identifier is followed by ``=``, so definitions may span several lines.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .relations import Between, Crossing, DirectionalOf, NearTo, RelationKind

KEYWORDS = {"and", "or", "not", "then"}

# relation name -> number of arguments
RELATIONS = {
    "crossing": 1,
    "anterior_of": 1,
    "posterior_of": 1,
    "left_of": 1,
    "right_of": 1,
    "superior_of": 1,
    "inferior_of": 1,
    "between": 2,
    "near_to": 2,
}


class QuerySyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # WORD, NUMBER, KEYWORD, PUNCT, EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\f\v]+)|(?P<nl>\n)|(?P<comment>\#[^\n]*)"
    r"|(?P<word>[A-Za-z0-9_]+(?:\.[0-9]+)?)|(?P<punct>[()=,@])"
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "word":
            low = tok.lower()
            if low in KEYWORDS:
                tokens.append(Token("KEYWORD", low, line, col))
            elif re.fullmatch(r"[0-9]+(\.[0-9]+)?", tok):
                tokens.append(Token("NUMBER", tok, line, col))
            elif "." in tok:
                raise QuerySyntaxError(f"malformed identifier {tok!r}", line, col)
            else:
                tokens.append(Token("WORD", tok, line, col))
        elif kind == "punct":
            tokens.append(Token("PUNCT", tok, line, col))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    relation: str
    args: tuple[str, ...]

    def to_relation(self) -> RelationKind:
        rel = self.relation
        if rel == "crossing":
            return Crossing(self.args[0])
        if rel == "between":
            return Between(self.args[0], self.args[1])
        if rel == "near_to":
            return NearTo(self.args[0], float(self.args[1]))
        return DirectionalOf(self.args[0], rel[: -len("_of")])

    def structures(self) -> tuple[str, ...]:
        return self.args[:1] if self.relation == "near_to" else self.args


@dataclass(frozen=True)
class Not:
    child: "Expr"


@dataclass(frozen=True)
class And:
    children: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Expr", ...]


Expr = Union[Atom, Not, And, Or]


@dataclass(frozen=True)
class Stage:
    expr: Expr
    threshold: float | None = None

    @property
    def negated(self) -> bool:
        return isinstance(self.expr, Not)


@dataclass(frozen=True)
class Query:
    name: str
    stages: tuple[Stage, ...]

    def atoms(self) -> list[Atom]:
        """Distinct atoms in first-appearance order."""
        seen: dict[Atom, None] = {}
        for st in self.stages:
            for a in iter_atoms(st.expr):
                seen.setdefault(a, None)
        return list(seen)


def iter_atoms(expr: Expr):
    if isinstance(expr, Atom):
        yield expr
    elif isinstance(expr, Not):
        yield from iter_atoms(expr.child)
    else:
        for c in expr.children:
            yield from iter_atoms(c)


def _nary(cls, items):
    flat = []
    for it in items:
        flat.extend(it.children if isinstance(it, cls) else (it,))
    return flat[0] if len(flat) == 1 else cls(tuple(flat))


# --- parser ----------------------------------------------------------------


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.depth = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        raise QuerySyntaxError(msg, tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = repr(text) if text else kind.lower()
            got = repr(t.text) if t.text else "end of input"
            self.error(f"expected {want}, found {got}")
        return self.advance()

    def is_keyword(self, word: str) -> bool:
        return self.tok.kind == "KEYWORD" and self.tok.text == word

    def is_punct(self, p: str) -> bool:
        return self.tok.kind == "PUNCT" and self.tok.text == p

    def parse_file(self) -> list[Query]:
        queries = []
        while self.tok.kind != "EOF":
            queries.append(self.parse_query())
        return queries

    def parse_query(self) -> Query:
        name = self.expect("WORD").text
        self.expect("PUNCT", "=")
        stages = [self.parse_stage()]
        while self.is_keyword("then"):
            self.advance()
            stages.append(self.parse_stage())
        t = self.tok
        if t.kind != "EOF" and not (t.kind == "WORD" and self.tokens[self.i + 1].text == "="):
            self.error(f"unexpected {t.text!r} after stage (missing 'then'?)")
        return Query(name, tuple(stages))

    def parse_stage(self) -> Stage:
        expr = self.parse_or()
        threshold = None
        if self.is_punct("@"):
            self.advance()
            t = self.expect("NUMBER")
            threshold = float(t.text)
            if not 0.0 < threshold <= 1.0:
                self.error(f"stage threshold {t.text} outside (0, 1]", t)
        return Stage(expr, threshold)

    def parse_or(self) -> Expr:
        items = [self.parse_and()]
        while self.is_keyword("or"):
            self.advance()
            items.append(self.parse_and())
        return _nary(Or, items)

    def parse_and(self) -> Expr:
        items = [self.parse_unary()]
        while self.is_keyword("and"):
            self.advance()
            items.append(self.parse_unary())
        return _nary(And, items)

    def parse_unary(self) -> Expr:
        if self.is_keyword("not"):
            self.advance()
            return Not(self.parse_unary())
        if self.is_punct("("):
            open_tok = self.advance()
            self.depth += 1
            expr = self.parse_or()
            if self.is_keyword("then"):
                self.error("'then' is only allowed between top-level stages, not inside parentheses")
            if not self.is_punct(")"):
                if self.tok.kind == "EOF":
                    self.error("unbalanced parenthesis", open_tok)
                self.error(f"expected ')', found {self.tok.text!r}")
            self.advance()
            self.depth -= 1
            return expr
        if self.tok.kind == "KEYWORD":
            self.error(f"unexpected keyword {self.tok.text!r}")
        return self.parse_atom()

    def parse_atom(self) -> Atom:
        name_tok = self.tok
        if name_tok.kind != "WORD":
            got = repr(name_tok.text) if name_tok.text else "end of input"
            self.error(f"expected a relation, found {got}")
        self.advance()
        rel = name_tok.text.lower()
        if rel not in RELATIONS:
            self.error(f"unknown relation {name_tok.text!r}", name_tok)
        open_tok = self.expect("PUNCT", "(")
        args = [self.parse_arg(rel, 0)]
        while self.is_punct(","):
            self.advance()
            args.append(self.parse_arg(rel, len(args)))
        if not self.is_punct(")"):
            if self.tok.kind == "EOF":
                self.error("unbalanced parenthesis", open_tok)
            self.error(f"expected ')' or ',', found {self.tok.text!r}")
        self.advance()
        if len(args) != RELATIONS[rel]:
            self.error(f"{rel} takes {RELATIONS[rel]} argument(s), got {len(args)}", name_tok)
        return Atom(rel, tuple(args))

    def parse_arg(self, rel: str, index: int) -> str:
        t = self.tok
        if rel == "near_to" and index == 1:
            return str(float(self.expect("NUMBER").text))
        if t.kind == "WORD" or (t.kind == "NUMBER" and "." not in t.text):
            self.advance()
            return t.text
        self.error(f"expected a structure name, found {t.text!r}" if t.text else
                   "expected a structure name, found end of input")


def parse(text: str) -> Query:
    """Parse exactly one query definition."""
    queries = parse_file(text)
    if len(queries) != 1:
        raise QuerySyntaxError(f"expected one query, found {len(queries)}", 1, 1)
    return queries[0]


def parse_file(text: str) -> list[Query]:
    return Parser(text).parse_file()


def load_queries(path) -> dict[str, Query]:
    from pathlib import Path

    queries = parse_file(Path(path).read_text(encoding="utf-8"))
    out: dict[str, Query] = {}
    for q in queries:
        if q.name in out:
            raise QuerySyntaxError(f"duplicate query name {q.name!r}", 1, 1)
        out[q.name] = q
    return out


# --- printing --------------------------------------------------------------

_PREC = {Or: 1, And: 2, Not: 3, Atom: 4}


def format_expr(expr: Expr, parent_prec: int = 0) -> str:
    if isinstance(expr, Atom):
        return f"{expr.relation}({', '.join(expr.args)})"
    if isinstance(expr, Not):
        s = "not " + format_expr(expr.child, _PREC[Not])
    else:
        word = " and " if isinstance(expr, And) else " or "
        # nested same-type operands are flattened at parse time, so parenthesize them
        s = word.join(format_expr(c, _PREC[type(expr)] + (type(c) is type(expr))) for c in expr.children)
    return f"({s})" if _PREC[type(expr)] < parent_prec or (
        _PREC[type(expr)] == parent_prec and not isinstance(expr, Not)) else s


def format_stage(stage: Stage) -> str:
    s = format_expr(stage.expr)
    if stage.threshold is not None:
        s += f" @ {stage.threshold:g}"
    return s


def format_query(q: Query) -> str:
    return f"{q.name} = " + " then ".join(format_stage(s) for s in q.stages)


def tree(q: Query) -> str:
    """Indented tree rendering used by the ``parse`` subcommand."""
    lines = [f"query {q.name} ({len(q.stages)} stage{'s' if len(q.stages) != 1 else ''})"]

    def walk(e: Expr, depth: int):
        pad = "  " * depth
        if isinstance(e, Atom):
            lines.append(f"{pad}{e.relation}({', '.join(e.args)})")
        elif isinstance(e, Not):
            lines.append(f"{pad}NOT")
            walk(e.child, depth + 1)
        else:
            lines.append(f"{pad}{'AND' if isinstance(e, And) else 'OR'}")
            for c in e.children:
                walk(c, depth + 1)

    for n, st in enumerate(q.stages, 1):
        thr = f" @ {st.threshold:g}" if st.threshold is not None else ""
        lines.append(f"  stage {n}{thr}")
        walk(st.expr, 2)
    return "\n".join(lines)
