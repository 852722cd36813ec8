"""Sparse multivariate polynomials over the reals.

A :class:`Polynomial` is an immutable map from exponent tuples to float
coefficients. Exponent tuples all have length ``nvars``; exact zeros are
never stored, so the zero polynomial is the empty map.

Also defined here: the text grammar used for problem input, and the
regularizing polynomials ``theta``/``phi`` (truncated ``sum_i exp(x_i^2)``)
together with the perturbation ``f + eps * theta``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]

MAX_EXPONENT = 2**31 - 1
MAX_FACTORIAL_ORDER = 170


class PolynomialError(ValueError):
    """Raised on malformed polynomial arithmetic (dimension mismatch etc.)."""


class ParseError(ValueError):
    """Syntax or name error in polynomial text, with the offending offset."""

    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{message} at position {pos}")


def grlex_key(exps: Exponent) -> tuple:
    """Sort key for graded lexicographic order, first variable most significant.

    Ascending by this key lists ``1, x1, x2, x1^2, x1*x2, x2^2, ...``.
    """
    return (sum(exps),) + tuple(-e for e in exps)


class Polynomial:
    __slots__ = ("_nvars", "_terms", "_degree")

    def __init__(self, nvars: int, terms: Mapping[Exponent, float] | None = None):
        if nvars < 1:
            raise PolynomialError(f"nvars must be positive, got {nvars}")
        clean: dict[Exponent, float] = {}
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise PolynomialError(
                    f"exponent {exps} has length {len(exps)}, expected {nvars}")
            if any(e < 0 for e in exps):
                raise PolynomialError(f"negative exponent in {exps}")
            c = float(coef)
            if c != 0.0:
                clean[exps] = clean.get(exps, 0.0) + c
                if clean[exps] == 0.0:
                    del clean[exps]
        self._nvars = nvars
        self._terms = clean
        self._degree = max((sum(e) for e in clean), default=0)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _raw(cls, nvars: int, terms: dict[Exponent, float]) -> Polynomial:
        # trusted fast path: keys already validated, zeros already dropped
        p = object.__new__(cls)
        p._nvars = nvars
        p._terms = terms
        p._degree = max((sum(e) for e in terms), default=0)
        return p

    @classmethod
    def zero(cls, nvars: int) -> Polynomial:
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c: float) -> Polynomial:
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def monomial(cls, exps: Sequence[int], c: float = 1.0) -> Polynomial:
        return cls(len(exps), {tuple(exps): c})

    @classmethod
    def variable(cls, nvars: int, i: int) -> Polynomial:
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): 1.0})

    # -- accessors --------------------------------------------------------------
    @property
    def nvars(self) -> int:
        return self._nvars

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    def coeff(self, exps: Sequence[int]) -> float:
        return self._terms.get(tuple(exps), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def sorted_terms(self, descending: bool = True) -> list[tuple[Exponent, float]]:
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]),
                      reverse=descending)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self.sorted_terms(descending=False))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._nvars == other._nvars and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self._nvars, frozenset(self._terms.items())))

    def __repr__(self) -> str:
        return f"Polynomial({self._nvars}, {self.to_string()!r})"

    def __str__(self) -> str:
        return self.to_string()

    # -- arithmetic -------------------------------------------------------------
    def _check(self, other: Polynomial) -> None:
        if not isinstance(other, Polynomial):
            raise TypeError(f"expected Polynomial, got {type(other).__name__}")
        if other._nvars != self._nvars:
            raise PolynomialError(
                f"nvars mismatch: {self._nvars} vs {other._nvars}")

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self._nvars, float(other))
        self._check(other)
        return other

    def __add__(self, other) -> Polynomial:
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            s = out.get(e, 0.0) + c
            if s == 0.0:
                out.pop(e, None)
            else:
                out[e] = s
        return Polynomial._raw(self._nvars, out)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial._raw(self._nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other) -> Polynomial:
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> Polynomial:
        return self._coerce(other) - self

    def __mul__(self, other) -> Polynomial:
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        self._check(other)
        out: dict[Exponent, float] = {}
        for ea, ca in self._terms.items():
            for eb, cb in other._terms.items():
                e = tuple(a + b for a, b in zip(ea, eb))
                out[e] = out.get(e, 0.0) + ca * cb
        return Polynomial._raw(self._nvars, {e: c for e, c in out.items() if c != 0.0})

    __rmul__ = __mul__

    def __pow__(self, k: int) -> Polynomial:
        if not isinstance(k, int) or k < 0:
            raise PolynomialError("only nonnegative integer powers are supported")
        out = Polynomial.constant(self._nvars, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def scale(self, c: float) -> Polynomial:
        c = float(c)
        if c == 0.0:
            return Polynomial._raw(self._nvars, {})
        return Polynomial._raw(
            self._nvars, {e: v * c for e, v in self._terms.items() if v * c != 0.0})

    # -- numerics ---------------------------------------------------------------
    def exponent_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Terms in ascending grlex order as ``(exponents[T, n], coefs[T])``."""
        items = self.sorted_terms(descending=False)
        if not items:
            return np.zeros((0, self._nvars), dtype=np.int64), np.zeros(0)
        exps = np.array([e for e, _ in items], dtype=np.int64)
        coefs = np.array([c for _, c in items], dtype=float)
        return exps, coefs

    def __call__(self, point) -> float:
        return evaluate(self, point)

    def l1_norm(self) -> float:
        return math.fsum(abs(c) for c in self._terms.values())

    def linf_norm(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def to_string(self, names: Sequence[str] | None = None) -> str:
        names = list(names) if names is not None else default_names(self._nvars)
        if len(names) != self._nvars:
            raise PolynomialError(
                f"{len(names)} names given for {self._nvars} variables")
        items = self.sorted_terms(descending=True)
        if not items:
            return "0"
        parts: list[str] = []
        for k, (exps, c) in enumerate(items):
            factors = []
            for name, e in zip(names, exps):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1.0 else repr(mag) + "*" + "*".join(factors)
            else:
                body = repr(mag)
            if k == 0:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append((" - " if c < 0 else " + ") + body)
        return "".join(parts)


def default_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def poly_add(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    return a + b


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    return a * b


def poly_scale(a: Polynomial, c: float) -> Polynomial:
    return a.scale(c)


def evaluate(p: Polynomial, point) -> float:
    """Direct evaluation of ``sum_a p_a x^a`` at one point."""
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.size != p.nvars:
        raise PolynomialError(f"point has length {x.size}, polynomial has {p.nvars} variables")
    exps, coefs = p.exponent_matrix()
    if coefs.size == 0:
        return 0.0
    return float(np.prod(x[None, :] ** exps, axis=1) @ coefs)


def evaluate_many(p: Polynomial, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != p.nvars:
        raise PolynomialError(f"points have {pts.shape[1]} columns, polynomial has {p.nvars} variables")
    exps, coefs = p.exponent_matrix()
    if coefs.size == 0:
        return np.zeros(pts.shape[0])
    mons = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
    return mons @ coefs


def l1_norm(p: Polynomial) -> float:
    return p.l1_norm()


def _inverse_factorials(r: int) -> list[float]:
    if r < 0:
        raise PolynomialError(f"order must be nonnegative, got {r}")
    if r > MAX_FACTORIAL_ORDER:
        raise PolynomialError(f"order {r} exceeds {MAX_FACTORIAL_ORDER}: k! overflows double")
    out = [1.0]
    fact = 1.0
    for k in range(1, r + 1):
        fact *= k
        out.append(1.0 / fact)
    return out


def _exp_square_sum(nvars: int, which: Sequence[int], r: int) -> Polynomial:
    inv = _inverse_factorials(r)
    terms: dict[Exponent, float] = {(0,) * nvars: float(len(which))}
    for k in range(1, r + 1):
        for i in which:
            e = [0] * nvars
            e[i] = 2 * k
            terms[tuple(e)] = inv[k]
    return Polynomial(nvars, terms)


def theta(n: int, r: int) -> Polynomial:
    """``sum_{k<=r} sum_i x_i^(2k) / k!`` in ``n`` variables."""
    if n < 1:
        raise PolynomialError(f"n must be positive, got {n}")
    return _exp_square_sum(n, range(n), r)


def phi(m: int, r: int, offset: int = 0, nvars: int | None = None) -> Polynomial:
    """Same construction as :func:`theta` over the ``m`` slack variables.

    With ``offset``/``nvars`` the slacks are embedded as variables
    ``offset .. offset+m-1`` of a larger ring (the lifted ``(x, z)`` space).
    """
    if m < 1:
        raise PolynomialError(f"m must be positive, got {m}")
    nvars = m + offset if nvars is None else nvars
    return _exp_square_sum(nvars, range(offset, offset + m), r)


def perturb(f: Polynomial, eps: float, r: int) -> Polynomial:
    """``f + eps * theta(n, r)``."""
    if eps < 0 or not math.isfinite(eps):
        raise PolynomialError(f"eps must be finite and nonnegative, got {eps}")
    if eps == 0:
        return f
    return f + theta(f.nvars, r).scale(eps)


def gram_form(basis: Sequence[Exponent], Q) -> Polynomial:
    """Expand ``v^T Q v`` for the monomial vector ``v`` listed by ``basis``."""
    Q = np.asarray(Q, dtype=float)
    s = len(basis)
    if Q.shape != (s, s):
        raise PolynomialError(f"Gram matrix shape {Q.shape} does not match basis size {s}")
    nvars = len(basis[0])
    out: dict[Exponent, float] = {}
    for i in range(s):
        ai = basis[i]
        for j in range(s):
            q = float(Q[i, j])
            if q == 0.0:
                continue
            e = tuple(a + b for a, b in zip(ai, basis[j]))
            out[e] = out.get(e, 0.0) + q
    return Polynomial(nvars, out)


# ---------------------------------------------------------------------------
# text grammar
# ---------------------------------------------------------------------------
_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*^])
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, names: Sequence[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.k = 0
        self.index = {name: i for i, name in enumerate(names)}
        self.n = len(names)

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.k]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def error(self, msg: str, tok=None):
        tok = tok or self.peek()
        raise ParseError(msg, tok[2], self.text)

    def parse(self) -> Polynomial:
        terms: dict[Exponent, float] = {}
        sign = 1.0
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            sign = -1.0 if val == "-" else 1.0
        while True:
            exps, coef = self.term()
            terms[exps] = terms.get(exps, 0.0) + sign * coef
            kind, val, _ = self.peek()
            if kind == "end":
                break
            if kind == "op" and val in "+-":
                self.take()
                sign = -1.0 if val == "-" else 1.0
                continue
            self.error(f"expected '+', '-' or end of input, found {val!r}")
        return Polynomial(self.n, terms)

    def term(self) -> tuple[Exponent, float]:
        coef = 1.0
        exps = [0] * self.n
        kind, val, _ = self.peek()
        # a signed coefficient may follow a binary operator: "x - -2"
        if kind == "op" and val in "+-" and self.tokens[self.k + 1][0] == "num":
            self.take()
            coef = -1.0 if val == "-" else 1.0
            kind, val, _ = self.peek()
        if kind == "num":
            coef *= float(self.take()[1])
            if not math.isfinite(coef):
                self.error("coefficient overflows double precision")
            if not (self.peek()[0] == "op" and self.peek()[1] == "*"):
                return tuple(exps), coef
            self.take()
        self.factor(exps)
        while self.peek()[0] == "op" and self.peek()[1] == "*":
            self.take()
            self.factor(exps)
        return tuple(exps), coef

    def factor(self, exps: list[int]) -> None:
        tok = self.take()
        kind, val, _ = tok
        if kind != "ident":
            self.error(f"expected variable name, found {val or 'end of input'!r}", tok)
        if val not in self.index:
            raise ParseError(f"unknown variable {val!r}", tok[2], self.text)
        power = 1
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            ptok = self.take()
            if ptok[0] != "num" or not ptok[1].isdigit():
                self.error("expected unsigned integer exponent", ptok)
            power = int(ptok[1])
            if power > MAX_EXPONENT:
                self.error(f"exponent {power} exceeds {MAX_EXPONENT}", ptok)
        exps[self.index[val]] += power
        if exps[self.index[val]] > MAX_EXPONENT:
            self.error(f"exponent of {val} exceeds {MAX_EXPONENT}", tok)


def parse_polynomial(text: str, names: Sequence[str]) -> Polynomial:
    """Parse ``text`` as a polynomial in the ordered variables ``names``.

    >>> parse_polynomial("3*x1^2*x2 - x2 + 1", ["x1", "x2"]).terms
    {(2, 1): 3.0, (0, 1): -1.0, (0, 0): 1.0}
    """
    if not names:
        raise PolynomialError("at least one variable name is required")
    if len(set(names)) != len(names):
        raise PolynomialError(f"duplicate variable names in {list(names)}")
    return _Parser(text, names).parse()


@dataclass(frozen=True)
class ProblemInstance:
    """``min f`` over ``{equalities == 0} ∩ {inequalities >= 0}``."""

    objective: Polynomial
    equalities: tuple[Polynomial, ...] = ()
    inequalities: tuple[Polynomial, ...] = ()
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = self.objective.nvars
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        names = tuple(self.names) if self.names else tuple(default_names(n))
        object.__setattr__(self, "names", names)
        if len(names) != n:
            raise PolynomialError(f"{len(names)} variable names for {n} variables")
        for g in self.equalities + self.inequalities:
            if g.nvars != n:
                raise PolynomialError(
                    f"constraint has {g.nvars} variables, objective has {n}")

    @property
    def nvars(self) -> int:
        return self.objective.nvars

    def is_feasible(self, point, tol: float = 1e-6) -> bool:
        return self.violation(point) <= tol

    def violation(self, point) -> float:
        v = [abs(evaluate(g, point)) for g in self.equalities]
        v += [max(0.0, -evaluate(g, point)) for g in self.inequalities]
        return max(v, default=0.0)


def instance_from_strings(objective: str, names: Iterable[str],
                          equalities: Iterable[str] = (),
                          inequalities: Iterable[str] = ()) -> ProblemInstance:
    names = tuple(names)
    return ProblemInstance(
        parse_polynomial(objective, names),
        tuple(parse_polynomial(g, names) for g in equalities),
        tuple(parse_polynomial(g, names) for g in inequalities),
        names,
    )
