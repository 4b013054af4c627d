"""Single-sign mutation switches used by the identity suite's self-test.

Each formula under test multiplies one of its terms by ``sign(name)``. The
default is +1; :func:`flipped` turns a named term to -1 for the duration of a
``with`` block so the verifier can demonstrate that the corresponding check
fails. Not thread-safe: run mutation self-tests serially.
"""

from __future__ import annotations

from contextlib import contextmanager

# name -> the formula term it flips
MUTATIONS = {
    "einstein_trace": "P = Ric - R/2 g  ->  Ric + R/2 g",
    "bianchi": "nabla_i P^ij: + Gamma^j_im P^im  ->  - Gamma^j_im P^im",
    "dual_bianchi": "L(T)_k: -1/2 h^ij nabla_k T_ij  ->  +1/2",
    "h_mu": "h = 1/8 R mu R mu  ->  -1/8",
    "P_mu": "P = -1/4 mu mu R  ->  +1/4",
    "detP_identity": "... + H P^mn  ->  ... - H P^mn",
    "decomposition": "-1/10 (P T + P T)  ->  +1/10",
    "symbol": "overall sign of the symbol",
    "tension": "Gamma(target) - Gamma(domain)  ->  Gamma(target) + Gamma(domain)",
    "evolution_P": "-detP g^ij  ->  +detP g^ij",
    "evolution_riem": "+g^pq (R h + R h)  ->  -g^pq (R h + R h)",
    "volume": "H sqrt(det g)  ->  -H sqrt(det g)",
    "logdetP": "-2H  ->  +2H",
}

_flipped: set[str] = set()


def sign(name: str) -> float:
    return -1.0 if name in _flipped else 1.0


@contextmanager
def flipped(name: str):
    if name not in MUTATIONS:
        raise KeyError(f"unknown mutation {name!r}")
    _flipped.add(name)
    try:
        yield
    finally:
        _flipped.discard(name)
