"""Builtin operators and the YAML system-file format.

System file layout::

    n: 2
    name: cauchy-riemann
    entries:            # p rows of p entries; null is the zero operator
      - - terms:
            - degree: 1
              coeff: [[[0, 0], 1.0, 0.0]]          # (eta, re, im)
              angular: [[1, 0.0, 0.5], [-1, 0.0, 0.5]]
          zero_mode: default
        - ...

``angular`` rows are ``(direction, re, im)`` with direction ``+1``/``-1`` on
the circle, and ``(m, re, im)`` angle modes ``exp(i m theta)`` on ``T^2``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import yaml

from .pdo_calculus import ClassicalSymbol, HomogeneousTerm, PdoSystem, scalar_system


class SystemFileError(ValueError):
    """Malformed system definition."""


# -- building blocks ---------------------------------------------------------


def _origin(n: int) -> tuple[int, ...]:
    return (0,) * n


def constant_term(n: int, degree: float, value: complex = 1.0, angular=None, coeff=None) -> HomogeneousTerm:
    if angular is None:
        angular = (1.0, 1.0) if n == 1 else {0: 1.0}
    return HomogeneousTerm(degree, coeff or {_origin(n): value}, angular)


def derivative_term(n: int, axis: int, coeff=None) -> HomogeneousTerm:
    """``c(x) d/dx_axis``, symbol ``i xi_axis = |xi| * i omega_axis``."""
    if n == 1:
        angular = (1j, -1j)
    elif axis == 0:
        # i cos(theta)
        angular = {1: 0.5j, -1: 0.5j}
    else:
        # i sin(theta)
        angular = {1: 0.5, -1: -0.5}
    return HomogeneousTerm(1.0, coeff or {_origin(n): 1.0}, angular)


def derivative(n: int, axis: int = 0, scale: complex = 1.0) -> ClassicalSymbol:
    return ClassicalSymbol((derivative_term(n, axis, {_origin(n): scale}),))


def identity(n: int, value: complex = 1.0) -> ClassicalSymbol:
    return ClassicalSymbol((constant_term(n, 0.0, value),))


def minus_laplacian_symbol(n: int) -> ClassicalSymbol:
    return ClassicalSymbol((constant_term(n, 2.0),))


def one_minus_laplacian_symbol(n: int) -> ClassicalSymbol:
    return ClassicalSymbol((constant_term(n, 2.0), constant_term(n, 0.0)))


# -- the test operators ------------------------------------------------------


def one_minus_laplacian(n: int = 1) -> PdoSystem:
    return scalar_system(one_minus_laplacian_symbol(n), name=f"one-minus-laplacian-T{n}")


def minus_laplacian(n: int = 1) -> PdoSystem:
    return scalar_system(minus_laplacian_symbol(n), name=f"minus-laplacian-T{n}")


def shift_toeplitz() -> PdoSystem:
    """Order-0 operator on the circle: ``e_k -> e_{k+1}`` for ``k >= 0``,
    ``e_k -> e_k`` for ``k < 0``.  Index -1."""
    plus = HomogeneousTerm(0.0, {(1,): 1.0}, (1.0, 0.0))
    minus = HomogeneousTerm(0.0, {(0,): 1.0}, (0.0, 1.0))
    return scalar_system(ClassicalSymbol((plus, minus), zero_mode="positive"), name="shift-toeplitz")


def multiplication_by_exp() -> PdoSystem:
    """Multiplication by ``exp(i x)`` on the circle."""
    return scalar_system(ClassicalSymbol((HomogeneousTerm(0.0, {(1,): 1.0}, (1.0, 1.0)),)), name="exp-ix")


def cauchy_riemann() -> PdoSystem:
    """``[[d1, -d2], [d2, d1]]`` on ``T^2``."""
    return PdoSystem(
        (
            (derivative(2, 0), derivative(2, 1, -1.0)),
            (derivative(2, 1), derivative(2, 0)),
        ),
        n=2,
        name="cauchy-riemann",
    )


def d1_torus2() -> PdoSystem:
    """``d/dx_1`` on ``T^2``; not elliptic."""
    return scalar_system(derivative(2, 0), name="d1-T2")


def perturbed_helmholtz() -> PdoSystem:
    """``(1 - Laplacian) + 0.1 exp(i x_1) d/dx_1`` on ``T^2``."""
    sym = ClassicalSymbol(
        (
            constant_term(2, 2.0),
            derivative_term(2, 0, {(1, 0): 0.1}),
            constant_term(2, 0.0),
        )
    )
    return scalar_system(sym, name="perturbed-helmholtz-T2")


def mixed_order_degenerate() -> PdoSystem:
    """``[[-Laplacian, d1], [d1, 1]]`` on ``T^2``: orders (2, 1), principal
    determinant identically zero."""
    return PdoSystem(
        (
            (minus_laplacian_symbol(2), derivative(2, 0)),
            (derivative(2, 0), identity(2)),
        ),
        n=2,
        name="mixed-order-degenerate",
    )


def diag_one_minus_laplacian() -> PdoSystem:
    a = one_minus_laplacian_symbol(1)
    return PdoSystem(((a, None), (None, a)), n=1, name="diag-one-minus-laplacian")


BUILTIN_SYSTEMS: dict[str, Callable[[], PdoSystem]] = {
    "shift-toeplitz": shift_toeplitz,
    "one-minus-laplacian": lambda: one_minus_laplacian(1),
    "one-minus-laplacian-T2": lambda: one_minus_laplacian(2),
    "minus-laplacian": lambda: minus_laplacian(1),
    "minus-laplacian-T2": lambda: minus_laplacian(2),
    "cauchy-riemann": cauchy_riemann,
    "d1-T2": d1_torus2,
    "perturbed-helmholtz-T2": perturbed_helmholtz,
    "mixed-order-degenerate": mixed_order_degenerate,
    "diag-one-minus-laplacian": diag_one_minus_laplacian,
    "exp-ix": multiplication_by_exp,
}


# -- file format -------------------------------------------------------------


def _complex_rows(rows, what: str, key_len: int | None):
    out = {}
    for i, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise SystemFileError(f"{what}[{i}]: expected [key, re, im], got {row!r}")
        key, re, im = row
        if key_len is not None:
            key = tuple(int(k) for k in (key if isinstance(key, (list, tuple)) else [key]))
            if len(key) != key_len:
                raise SystemFileError(f"{what}[{i}]: mode {key} is not {key_len}-dimensional")
        else:
            key = int(key)
        out[key] = complex(float(re), float(im))
    return out


def symbol_from_dict(data: dict, n: int, where: str = "entry") -> ClassicalSymbol:
    try:
        terms = []
        for i, t in enumerate(data["terms"]):
            loc = f"{where}.terms[{i}]"
            coeff = _complex_rows(t["coeff"], f"{loc}.coeff", n)
            ang = _complex_rows(t["angular"], f"{loc}.angular", None)
            if n == 1:
                if set(ang) - {1, -1}:
                    raise SystemFileError(f"{loc}.angular: directions on the circle are +1 and -1")
                angular = (ang.get(1, 0j), ang.get(-1, 0j))
            else:
                angular = ang
            terms.append(
                HomogeneousTerm(float(t["degree"]), coeff, angular, float(t.get("cutoff_radius", 1.0)))
            )
        zm = data.get("zero_mode", "default")
        if isinstance(zm, list):
            zm = _complex_rows(zm, f"{where}.zero_mode", n)
        return ClassicalSymbol(tuple(terms), zero_mode=zm)
    except KeyError as exc:
        raise SystemFileError(f"{where}: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SystemFileError):
            raise
        raise SystemFileError(f"{where}: {exc}") from exc


def system_from_dict(data: dict) -> PdoSystem:
    if not isinstance(data, dict):
        raise SystemFileError("system file must be a mapping")
    try:
        n = int(data["n"])
        rows = data["entries"]
    except KeyError as exc:
        raise SystemFileError(f"missing field {exc}") from exc
    entries = []
    for j, row in enumerate(rows):
        entries.append(
            tuple(
                None if e is None else symbol_from_dict(e, n, f"entries[{j}][{k}]") for k, e in enumerate(row)
            )
        )
    try:
        return PdoSystem(tuple(entries), n=n, name=str(data.get("name", "")))
    except ValueError as exc:
        raise SystemFileError(str(exc)) from exc


def _rows(mapping, key_is_mode: bool):
    return [
        [list(k) if key_is_mode else int(k), float(v.real), float(v.imag)] for k, v in mapping.items()
    ]


def system_to_dict(A: PdoSystem) -> dict:
    entries = []
    for row in A.entries:
        out_row = []
        for a in row:
            if a is None:
                out_row.append(None)
                continue
            terms = []
            for t in a.terms:
                if A.n == 1:
                    ang = [[1, t.angular[0].real, t.angular[0].imag], [-1, t.angular[1].real, t.angular[1].imag]]
                else:
                    ang = _rows(t.angular, False)
                item = {"degree": float(t.degree), "coeff": _rows(t.coeff_modes, True), "angular": ang}
                if t.cutoff_radius != 1.0:
                    item["cutoff_radius"] = float(t.cutoff_radius)
                terms.append(item)
            zm = a.zero_mode if isinstance(a.zero_mode, str) else _rows(a.zero_mode, True)
            out_row.append({"terms": terms, "zero_mode": zm})
        entries.append(out_row)
    return {"n": A.n, "name": A.name, "entries": entries}


def load_system(source: str | Path) -> PdoSystem:
    """Load ``builtin:<name>`` or a YAML system file."""
    text = str(source)
    if text.startswith("builtin:"):
        name = text.split(":", 1)[1]
        if name not in BUILTIN_SYSTEMS:
            raise SystemFileError(f"unknown builtin system {name!r}; known: {sorted(BUILTIN_SYSTEMS)}")
        return BUILTIN_SYSTEMS[name]()
    path = Path(source)
    if not path.is_file():
        raise FileNotFoundError(f"system file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise SystemFileError(f"{path}: {exc}") from exc
    return system_from_dict(data)


def dump_system(A: PdoSystem, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(system_to_dict(A), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text
