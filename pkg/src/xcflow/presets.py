"""Named left-invariant geometries and parameter sweeps over them.

Preset ids are strings ``name`` or ``name:p1,p2``; for example
``hyperbolic_solvable:1,2``, ``su2_berger:0.5``, ``nil``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from xcflow.curvature import HomogeneousGeometry, JacobiViolation, LieAlgebra
from xcflow.flow import FlowConfig, FlowTrace, run_flow


class InvalidParameter(ValueError):
    """Unknown preset or parameters outside the documented range."""


def _hyperbolic_solvable(alpha: float, beta: float):
    if not (alpha > 0 and beta > 0):
        raise InvalidParameter("hyperbolic_solvable needs alpha, beta > 0")
    alg = LieAlgebra.from_brackets({(0, 1): (0, alpha, 0), (0, 2): (0, 0, beta)},
                                   name=f"hyperbolic_solvable:{alpha:g},{beta:g}")
    return alg, np.eye(3)


def _nil():
    return LieAlgebra.from_brackets({(0, 1): (0, 0, 1)}, name="nil"), np.eye(3)


def _su2_brackets(name):
    return LieAlgebra.from_brackets({(0, 1): (0, 0, 2), (1, 2): (2, 0, 0), (2, 0): (0, 2, 0)},
                                    name=name)


def _su2_round():
    return _su2_brackets("su2_round"), np.eye(3)


def _su2_berger(lam: float):
    if not lam > 0:
        raise InvalidParameter("su2_berger needs lambda > 0")
    # fibre stretched by lam, total volume kept equal to the round one
    q = lam ** (-2 / 3) * np.diag([1.0, 1.0, lam**2])
    return _su2_brackets(f"su2_berger:{lam:g}"), q


def _sol():
    return LieAlgebra.from_brackets({(2, 0): (1, 0, 0), (2, 1): (0, -1, 0)}, name="sol"), np.eye(3)


def _abelian_flat():
    return LieAlgebra(C=np.zeros((3, 3, 3)), name="abelian_flat"), np.eye(3)


PRESETS = {
    "hyperbolic_solvable": (_hyperbolic_solvable, 2, (1.0, 1.0)),
    "nil": (_nil, 0, ()),
    "su2_round": (_su2_round, 0, ()),
    "su2_berger": (_su2_berger, 1, (1.0,)),
    "sol": (_sol, 0, ()),
    "abelian_flat": (_abelian_flat, 0, ()),
}


def parse_preset_id(preset_id: str) -> tuple[str, tuple[float, ...]]:
    name, _, rest = str(preset_id).partition(":")
    name = name.strip()
    if name not in PRESETS:
        raise InvalidParameter(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    _, arity, default = PRESETS[name]
    if not rest:
        return name, default
    try:
        params = tuple(float(p) for p in rest.split(","))
    except ValueError:
        raise InvalidParameter(f"non-numeric parameters in {preset_id!r}") from None
    if len(params) != arity:
        raise InvalidParameter(f"{name} takes {arity} parameter(s), got {len(params)}")
    return name, params


def format_preset_id(name: str, params) -> str:
    return name if not params else name + ":" + ",".join(f"{p:g}" for p in params)


def build_preset(preset_id: str) -> tuple[LieAlgebra, HomogeneousGeometry]:
    name, params = parse_preset_id(preset_id)
    algebra, q = PRESETS[name][0](*params)
    if not validate_jacobi(algebra):
        raise JacobiViolation(f"{name} fails the Jacobi identity")
    geom = HomogeneousGeometry(algebra, q)
    if name == "hyperbolic_solvable" and geom.bundle.sign_class != "negative":
        raise AssertionError("solvable preset lost negative curvature")
    return algebra, geom


def validate_jacobi(algebra: LieAlgebra, tol: float = 1e-14) -> bool:
    return algebra.antisymmetry_defect <= tol and algebra.jacobi_defect <= tol


def pinching_ratio(bundle) -> float:
    s = np.abs(np.asarray(bundle.sec))
    return float(np.max(s) / np.min(s))


@dataclass
class SweepResult:
    preset_id: str
    params: tuple
    trace: FlowTrace | None = None
    error: str | None = None
    pinching: list = field(default_factory=list)

    @property
    def final_pinching(self) -> float:
        return self.pinching[-1] if self.pinching else float("nan")

    @property
    def breakdown_time(self) -> float | None:
        if self.trace is None or self.trace.event is None:
            return None
        return self.trace.event.time


def sweep_family(template: str, grid, config: FlowConfig) -> list[SweepResult]:
    """One flow per parameter point; errors are recorded and the sweep continues.

    ``grid`` is a sequence of per-parameter value lists whose Cartesian
    product is swept, e.g. ``[[1, 2], [1, 2, 3]]`` for ``hyperbolic_solvable``.
    """
    name = template.partition(":")[0]
    results = []
    for params in itertools.product(*grid):
        pid = format_preset_id(name, params)
        res = SweepResult(preset_id=pid, params=tuple(params))
        try:
            _, geom = build_preset(pid)
            res.trace = run_flow(config, geom)
            res.pinching = [float(p) for p in res.trace.column("pinching")]
        except Exception as exc:  # noqa: BLE001 - recorded per run
            res.error = f"{type(exc).__name__}: {exc}"
        results.append(res)
    return results
