"""Plain-text problem files.

::

    # minimize x over the unit circle points of the line
    vars: x
    minimize: x
    subject_to:
        x^2 - 1 == 0
        x >= 0

Variable names may be separated by commas or blanks. The objective may
continue over several lines until the next section header. Each
constraint line is ``<poly> == 0`` or ``<poly> >= 0``; ``<=`` is accepted
and flipped. A constant other than 0 on the right-hand side is moved to
the left. ``#`` starts a comment.
"""

from __future__ import annotations

import re
from pathlib import Path

from .poly import ParseError, Polynomial, ProblemInstance, parse_polynomial

_HEADER = re.compile(r"^\s*(vars|minimize|subject_to)\s*:(.*)$")
_RELATION = re.compile(r"(==|>=|<=)")


class ProblemFileError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def parse_problem(text: str) -> ProblemInstance:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                raise ProblemFileError(f"section {current!r} appears twice", lineno)
            sections[current] = []
            rest = m.group(2).strip()
            if rest:
                sections[current].append((lineno, rest))
            continue
        if current is None:
            raise ProblemFileError("text before the first section header", lineno)
        sections[current].append((lineno, line.strip()))

    if "vars" not in sections:
        raise ProblemFileError("missing 'vars:' section")
    if "minimize" not in sections or not sections["minimize"]:
        raise ProblemFileError("missing 'minimize:' section")
    names = [v for _, chunk in sections["vars"] for v in re.split(r"[,\s]+", chunk) if v]
    if not names:
        raise ProblemFileError("no variables declared")
    if len(set(names)) != len(names):
        raise ProblemFileError(f"duplicate variable names in {names}")

    obj_line = sections["minimize"][0][0]
    objective = _parse(" ".join(chunk for _, chunk in sections["minimize"]), names, obj_line)
    eqs: list[Polynomial] = []
    ineqs: list[Polynomial] = []
    for lineno, chunk in sections.get("subject_to", []):
        parts = _RELATION.split(chunk)
        if len(parts) != 3:
            raise ProblemFileError(f"expected '<poly> == 0' or '<poly> >= 0', got {chunk!r}", lineno)
        lhs, rel, rhs = parts
        p = _parse(lhs, names, lineno) - _parse(rhs, names, lineno)
        if rel == "==":
            eqs.append(p)
        elif rel == ">=":
            ineqs.append(p)
        else:
            ineqs.append(-p)
    return ProblemInstance(objective, tuple(eqs), tuple(ineqs), tuple(names))


def _parse(text: str, names, lineno: int) -> Polynomial:
    try:
        return parse_polynomial(text, names)
    except ParseError as exc:
        raise ProblemFileError(str(exc), lineno) from exc


def load_problem(path) -> ProblemInstance:
    return parse_problem(Path(path).read_text(encoding="utf-8"))


def format_problem(inst: ProblemInstance, header: str = "") -> str:
    out = []
    if header:
        out.extend(f"# {line}" for line in header.splitlines())
    out.append("vars: " + ", ".join(inst.names))
    out.append("minimize: " + inst.objective.to_string(inst.names))
    if inst.equalities or inst.inequalities:
        out.append("subject_to:")
        out.extend(f"    {g.to_string(inst.names)} == 0" for g in inst.equalities)
        out.extend(f"    {g.to_string(inst.names)} >= 0" for g in inst.inequalities)
    return "\n".join(out) + "\n"
