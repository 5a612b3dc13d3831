"""Service contracts: the QoS vocabulary spoken between schedulers.

A contract names a service class plus its parameters, written ``TYPE[param]``:
RESBH[budget,period] and RESBS[budget,period] are hard/soft reservations,
PS[share] is a proportional share in ppm of one CPU, BE is best effort, NULL is
zero service and ALL is the whole CPU (root only). All arithmetic on contracts
is exact: integers and Fractions, never floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import gcd

PPM = 1_000_000
MAX_PERIOD = 2 ** 31


class ServiceClass(Enum):
    RESBH = "RESBH"
    RESBS = "RESBS"
    PS = "PS"
    BE = "BE"
    NULL = "NULL"
    ALL = "ALL"


RESERVATION_CLASSES = (ServiceClass.RESBH, ServiceClass.RESBS)

# arity of the bracket parameter list per class
_ARITY = {
    ServiceClass.RESBH: 2,
    ServiceClass.RESBS: 2,
    ServiceClass.PS: 1,
    ServiceClass.BE: 0,
    ServiceClass.NULL: 0,
    ServiceClass.ALL: 0,
}


class ContractError(ValueError):
    """Malformed contract text or parameters; carries the offending position."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (position {position})")
        self.position = position


@dataclass(frozen=True)
class Contract:
    """Immutable service contract value.

    budget/period are set for reservations only, share for PS only; the other
    classes carry no parameters.
    """

    service: ServiceClass
    budget: int | None = None
    period: int | None = None
    share: int | None = None

    def __post_init__(self):
        s = self.service
        if s in RESERVATION_CLASSES:
            if not isinstance(self.budget, int) or not isinstance(self.period, int):
                raise ContractError(f"{s.value} needs integer budget and period")
            if self.budget < 1:
                raise ContractError("budget must be positive")
            if self.period > MAX_PERIOD:
                raise ContractError(f"period exceeds {MAX_PERIOD}")
            if self.budget > self.period:
                raise ContractError(
                    f"budget {self.budget} exceeds period {self.period}"
                )
            if self.share is not None:
                raise ContractError(f"{s.value} takes no share")
        elif s is ServiceClass.PS:
            if not isinstance(self.share, int):
                raise ContractError("PS needs an integer share")
            if not 0 < self.share <= PPM:
                raise ContractError(f"share {self.share} outside (0, {PPM}]")
            if self.budget is not None or self.period is not None:
                raise ContractError("PS takes no budget/period")
        else:
            if self.budget is not None or self.period is not None or self.share is not None:
                raise ContractError(f"{s.value} takes no parameters")

    # constructors used throughout the package and tests
    @classmethod
    def resbh(cls, budget: int, period: int) -> "Contract":
        return cls(ServiceClass.RESBH, budget=budget, period=period)

    @classmethod
    def resbs(cls, budget: int, period: int) -> "Contract":
        return cls(ServiceClass.RESBS, budget=budget, period=period)

    @classmethod
    def ps(cls, share: int) -> "Contract":
        return cls(ServiceClass.PS, share=share)

    @classmethod
    def be(cls) -> "Contract":
        return cls(ServiceClass.BE)

    @classmethod
    def null(cls) -> "Contract":
        return cls(ServiceClass.NULL)

    @classmethod
    def all_cpu(cls) -> "Contract":
        return cls(ServiceClass.ALL)

    def is_reservation(self) -> bool:
        return self.service in RESERVATION_CLASSES

    def slack(self) -> int:
        # worst-case supply delay driver: period - budget
        if not self.is_reservation():
            raise ContractError(f"{self.service.value} has no slack")
        return self.period - self.budget

    def __str__(self) -> str:
        return format_contract(self)


_CLASS_NAMES = {c.value: c for c in ServiceClass}


def parse_contract(text: str) -> Contract:
    """Parse ``TYPE``, ``TYPE[n]`` or ``TYPE[n,m]`` into a Contract.

    Spaces are tolerated around parameters inside the brackets and after
    commas; nothing else. Errors name the offending token and its position.
    """
    if not isinstance(text, str):
        raise ContractError("contract must be a string")
    i = 0
    while i < len(text) and text[i].isalpha():
        i += 1
    token = text[:i]
    if token not in _CLASS_NAMES:
        shown = token if token else (text[:1] or "<empty>")
        raise ContractError(f"unknown service class {shown!r}", 0)
    service = _CLASS_NAMES[token]

    params: list[tuple[int, int]] = []  # (value, position of first digit)
    if i < len(text) and text[i] == "[":
        bracket = i
        i += 1
        while True:
            while i < len(text) and text[i] == " ":
                i += 1
            start = i
            while i < len(text) and text[i].isdigit():
                i += 1
            if i == start:
                found = text[i] if i < len(text) else "<end>"
                raise ContractError(f"expected integer, found {found!r}", i)
            params.append((int(text[start:i]), start))
            while i < len(text) and text[i] == " ":
                i += 1
            if i < len(text) and text[i] == ",":
                i += 1
                continue
            if i < len(text) and text[i] == "]":
                i += 1
                break
            found = text[i] if i < len(text) else "<end>"
            raise ContractError(f"expected ',' or ']', found {found!r}", i)
        if len(params) != _ARITY[service]:
            raise ContractError(
                f"{service.value} takes {_ARITY[service]} parameter(s), got {len(params)}",
                bracket,
            )
    elif _ARITY[service] != 0:
        raise ContractError(
            f"{service.value} takes {_ARITY[service]} parameter(s), got 0", i
        )

    if i != len(text):
        raise ContractError(f"trailing garbage {text[i:]!r}", i)

    if service in RESERVATION_CLASSES:
        (budget, bpos), (period, ppos) = params
        if budget < 1:
            raise ContractError("budget must be positive", bpos)
        if period > MAX_PERIOD:
            raise ContractError(f"period {period} exceeds {MAX_PERIOD}", ppos)
        if budget > period:
            raise ContractError(f"budget {budget} exceeds period {period}", bpos)
        return Contract(service, budget=budget, period=period)
    if service is ServiceClass.PS:
        share, spos = params[0]
        if not 0 < share <= PPM:
            raise ContractError(f"share {share} outside (0, {PPM}]", spos)
        return Contract(service, share=share)
    return Contract(service)


def format_contract(c: Contract) -> str:
    """Canonical text form: no spaces, round-trips through parse_contract."""
    if c.is_reservation():
        return f"{c.service.value}[{c.budget},{c.period}]"
    if c.service is ServiceClass.PS:
        return f"PS[{c.share}]"
    return c.service.value


def utilization(c: Contract) -> Fraction:
    """CPU fraction the contract stands for, as an exact rational in [0, 1]."""
    if c.is_reservation():
        return Fraction(c.budget, c.period)
    if c.service is ServiceClass.PS:
        return Fraction(c.share, PPM)
    if c.service is ServiceClass.ALL:
        return Fraction(1)
    return Fraction(0)


def lsbf(c: Contract, t: int) -> Fraction:
    """Linear supply bound: least service guaranteed in any window of length t.

    Reservations supply nothing for up to 2*(period - budget) ticks, then at
    utilization rate. ALL is the identity, PS supplies at its rate (latency is
    the share scheduler's concern), BE/NULL promise nothing.
    """
    if t < 0:
        raise ValueError("window length must be >= 0")
    if c.is_reservation():
        u = utilization(c)
        blackout = 2 * c.slack()
        return max(Fraction(0), u * (t - blackout))
    if c.service is ServiceClass.ALL:
        return Fraction(t)
    if c.service is ServiceClass.PS:
        return utilization(c) * t
    return Fraction(0)


def _reservation_dominates(p: Contract, r: Contract) -> bool:
    """Exact check: worst-case supply of p >= worst-case supply of r, all t.

    Equivalent to: for every work amount w, p delivers w no later than r does.
    With x = budget and s = period - budget, the time to deliver w is
    (2 + floor((w-1)/x))*s + w, so dominance reduces to
    (2+k)*s_p <= (2 + floor(k*x_p/x_r))*s_r for all k >= 0, which is periodic
    in k with period x_r.
    """
    sp, sr = p.slack(), r.slack()
    if sp > sr:
        return False
    if utilization(p) < utilization(r):
        return False
    xp, xr = p.budget, r.budget
    if xp >= xr or sp == 0:
        return True
    g = gcd(xp, xr)
    growth = xp * sr - xr * sp  # >= 0 once the utilization test passed
    if growth == 0:
        # worst corner is where k*xp mod xr peaks at xr - g
        return 2 * xr * (sr - sp) >= (xr - g) * sr
    # once k*growth clears this, every later corner is safe too
    threshold = (xr - g) * sr - 2 * xr * (sr - sp)
    for k in range(xr):
        if k * growth >= threshold:
            return True
        if (2 + (k * xp) // xr) * sr < (2 + k) * sp:
            return False
    return True


def satisfies(provided: Contract, requested: Contract) -> bool:
    """Can `provided` stand in for `requested`? Conservative, exact arithmetic.

    NULL asks for nothing; BE is satisfied by anything live; PS needs rate;
    reservations need worst-case supply dominance from a reservation (soft
    never covers hard); only ALL satisfies ALL.
    """
    p, r = provided.service, requested.service
    if r is ServiceClass.NULL:
        return True
    if r is ServiceClass.BE:
        return p is not ServiceClass.NULL
    if r is ServiceClass.ALL:
        return p is ServiceClass.ALL
    if r is ServiceClass.PS:
        if p is ServiceClass.ALL:
            return True
        if p is ServiceClass.PS:
            return provided.share >= requested.share
        if p in RESERVATION_CLASSES:
            return utilization(provided) >= utilization(requested)
        return False
    # requested is a reservation
    if p is ServiceClass.ALL:
        return True
    if p not in RESERVATION_CLASSES:
        return False
    if r is ServiceClass.RESBH and p is not ServiceClass.RESBH:
        return False  # soft service cannot back a hard promise
    return _reservation_dominates(provided, requested)
