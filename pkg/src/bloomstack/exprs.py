"""Tiny expression language for trigger bindings and activity configs.

An expression is either a bare literal string (no '@', no quotes) or a
'+'-joined sequence of quoted literals and context references such as
`@event.path` or `@param.file`. That is all the folder/file substitution
the pipelines need; anything fancier is rejected up front.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class BadExpression(ValueError):
    """Expression failed to parse or references a disallowed field."""


class ExpressionEvaluationError(KeyError):
    """Expression referenced a context field that is absent at eval time."""


_REF_RE = re.compile(r"@([a-z_]+)\.([a-z_]+)")


@dataclass(frozen=True)
class Expr:
    source: str
    # tokens: ("lit", text) or ("ref", namespace, field)
    tokens: tuple[tuple[str, ...], ...]

    def references(self) -> set[tuple[str, str]]:
        return {(t[1], t[2]) for t in self.tokens if t[0] == "ref"}

    def evaluate(self, context: dict[str, dict[str, str]]) -> str:
        parts = []
        for tok in self.tokens:
            if tok[0] == "lit":
                parts.append(tok[1])
            else:
                _, ns, fld = tok
                try:
                    parts.append(str(context[ns][fld]))
                except KeyError:
                    raise ExpressionEvaluationError(
                        f"no value for @{ns}.{fld} in {self.source!r}"
                    ) from None
        return "".join(parts)


def parse_expr(text: str) -> Expr:
    if not isinstance(text, str):
        raise BadExpression(f"expression must be a string, got {type(text).__name__}")
    if "@" not in text and "'" not in text and '"' not in text:
        # Plain literal, used verbatim. '+' has no meaning here.
        return Expr(source=text, tokens=(("lit", text),))

    tokens: list[tuple[str, ...]] = []
    i = 0
    expect_term = True
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if expect_term:
            if ch in "'\"":
                end = text.find(ch, i + 1)
                if end < 0:
                    raise BadExpression(f"unterminated quote in {text!r}")
                tokens.append(("lit", text[i + 1 : end]))
                i = end + 1
            elif ch == "@":
                m = _REF_RE.match(text, i)
                if not m:
                    raise BadExpression(f"malformed reference at offset {i} in {text!r}")
                tokens.append(("ref", m.group(1), m.group(2)))
                i = m.end()
            else:
                raise BadExpression(f"expected literal or @reference at offset {i} in {text!r}")
            expect_term = False
        else:
            if ch != "+":
                raise BadExpression(f"expected '+' at offset {i} in {text!r}")
            expect_term = True
            i += 1
    if expect_term:
        raise BadExpression(f"dangling '+' or empty expression: {text!r}")
    return Expr(source=text, tokens=tuple(tokens))


def validate_references(expr: Expr, allowed: set[tuple[str, str]]) -> None:
    bad = expr.references() - allowed
    if bad:
        names = ", ".join(sorted(f"@{ns}.{fld}" for ns, fld in bad))
        raise BadExpression(f"{expr.source!r} references unavailable field(s): {names}")
