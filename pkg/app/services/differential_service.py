"""
Service for rational k-differentials: singularities, residues, normal forms,
branches of the k-th root and path integrals of the distinguished parameter.
"""
import cmath
import json
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import (
    IntegrationError,
    RegularPointError,
    SchemaError,
    SingularPointError,
)
from app.models.differential import (
    AdmissibilityReport,
    DivisorPoint,
    NormalForm,
    RationalKDifferential,
    Singularity,
)
from app.utils.geometry import zeta

logger = logging.getLogger(__name__)

# Point argument: a complex position or None for infinity
Point = Optional[complex]


def parse_differential(doc: Union[str, bytes, Dict]) -> RationalKDifferential:
    """
    Validate a differential document.

    Args:
        doc: JSON text or an already decoded mapping

    Returns:
        The validated differential

    Raises:
        SchemaError: when a field is missing or violates an invariant
    """
    try:
        if isinstance(doc, (str, bytes)):
            return RationalKDifferential.model_validate_json(doc)
        return RationalKDifferential.model_validate(doc)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "document"
        raise SchemaError(f"differential document, field '{field}': {first['msg']}") from e


def emit_differential(psi: RationalKDifferential) -> Dict:
    """Document form of a differential."""
    return psi.model_dump(mode="json")


def _same(a: complex, b: complex) -> bool:
    return abs(a - b) <= settings.POSITION_TOL * max(1.0, abs(a))


def order_at(psi: RationalKDifferential, p: Point) -> int:
    """Signed order of Psi at p (0 at regular points)."""
    if p is None:
        return psi.order_at_infinity
    for a, m in psi.finite_points:
        if _same(a, p):
            return m
    return 0


def labels(psi: RationalKDifferential) -> List[Tuple[str, Point, int]]:
    """Stable labels: Z<i> for zeros, P<i> for poles, inf for infinity."""
    result = [(f"Z{i}", p.z, p.m) for i, p in enumerate(psi.zeros)]
    result += [(f"P{i}", p.z, -p.m) for i, p in enumerate(psi.poles)]
    if psi.order_at_infinity != 0:
        result.append(("inf", None, psi.order_at_infinity))
    return result


def evaluate(psi: RationalKDifferential, z: complex) -> complex:
    """R(z) at a finite point."""
    value = complex(psi.leading)
    for a, m in psi.finite_points:
        value *= (z - a) ** m
    return value


def _exp_series(g: np.ndarray) -> np.ndarray:
    """Coefficients of exp(sum g_j t^j) given g with g[0] = 0."""
    n = len(g)
    e = np.zeros(n, dtype=complex)
    e[0] = 1.0
    for i in range(1, n):
        j = np.arange(1, i + 1)
        e[i] = np.sum(j * g[1:i + 1] * e[i - j]) / i
    return e


def _local_data(psi: RationalKDifferential, p: Point) -> Tuple[int, complex, List[Tuple[complex, int]]]:
    """Order, constant C and (alpha, m) list with R = t^ord * C * prod(1 - alpha t)^m."""
    if p is None:
        constant = (-1) ** psi.k * complex(psi.leading)
        return psi.order_at_infinity, constant, [(a, m) for a, m in psi.finite_points]
    order = 0
    constant = complex(psi.leading)
    alphas = []
    for a, m in psi.finite_points:
        if _same(a, p):
            order = m
            continue
        constant *= (p - a) ** m
        alphas.append((1.0 / (a - p), m))
    return order, constant, alphas


def _log_series(alphas: List[Tuple[complex, int]], terms: int) -> np.ndarray:
    g = np.zeros(terms, dtype=complex)
    for j in range(1, terms):
        g[j] = -sum(m * alpha ** j for alpha, m in alphas) / j
    return g


def local_series(psi: RationalKDifferential, p: Point, terms: Optional[int] = None) -> Tuple[int, np.ndarray]:
    """
    Laurent data of R at p in the local coordinate t (t = 1/z at infinity).

    Returns:
        (order, c) with R = t^order * sum_j c[j] t^j up to the requested terms
    """
    terms = terms or settings.SERIES_TERMS
    order, constant, alphas = _local_data(psi, p)
    return order, constant * _exp_series(_log_series(alphas, terms))


def residue_at_pole(psi: RationalKDifferential, p: Point) -> complex:
    """
    Coefficient r of the t^-k term of the local expansion at an order -k pole.

    Raises:
        ValueError: when p is not a pole of order exactly -k
    """
    order, constant, _ = _local_data(psi, p)
    if order != -psi.k:
        where = "infinity" if p is None else str(p)
        raise ValueError(f"point {where} has order {order}, not {-psi.k}")
    return constant


def analyze_singularities(psi: RationalKDifferential) -> List[Singularity]:
    """One entry per zero and pole, infinity included when its order is nonzero."""
    k = psi.k
    result = []
    for label, position, m in labels(psi):
        conical = m > -k
        result.append(Singularity(
            label=label,
            position=position,
            order=m,
            conical=conical,
            cone_angle=(m + k) * 2.0 * math.pi / k if conical else None,
            residue=residue_at_pole(psi, position) if m == -k else None,
        ))
    return result


def is_admissible(psi: RationalKDifferential) -> AdmissibilityReport:
    """No pole of order below -k and every order -k residue in i^k * R."""
    k = psi.k
    reasons = []
    for label, position, m in labels(psi):
        if m < -k:
            reasons.append(f"{label}: pole of order {m} < {-k}")
        elif m == -k:
            r = residue_at_pole(psi, position) / (1j ** k)
            if abs(math.sin(cmath.phase(r))) > settings.RESIDUE_ARG_TOL:
                reasons.append(f"{label}: residue {r * 1j ** k} is not in i^{k}*R")
    return AdmissibilityReport(admissible=not reasons, reasons=reasons)


def _principal_root(value: complex, k: int) -> complex:
    if value == 0:
        return 0j
    return cmath.exp(cmath.log(value) / k)


def classify_normal_form(psi: RationalKDifferential, p: Point) -> NormalForm:
    """
    Local normal form type at a singularity.

    Raises:
        RegularPointError: when p is a regular point
    """
    k = psi.k
    order, constant, alphas = _local_data(psi, p)
    if order == 0:
        raise RegularPointError(f"point {p} is regular")
    if order > -k or order % k != 0:
        return NormalForm(kind="PowerForm", m=order)
    if order == -k:
        return NormalForm(kind="ResidueForm", m=order, r=constant)
    j = -order // k
    root_series = _exp_series(_log_series(alphas, j + 1) / k)
    s_raw = _principal_root(constant, k) * root_series[j - 1]
    r = s_raw ** k
    return NormalForm(kind="HigherPoleForm", m=order, r=r, s=_principal_root(r, k))


def dual(psi: RationalKDifferential) -> RationalKDifferential:
    """Psi* = i Psi."""
    return psi.model_copy(update={"leading": complex(psi.leading) * 1j})


def scale(psi: RationalKDifferential, factor: complex) -> RationalKDifferential:
    """factor * Psi with the same divisor."""
    if factor == 0:
        raise ValueError("scale factor must be nonzero")
    return psi.model_copy(update={"leading": complex(psi.leading) * factor})


def pullback_mobius(psi: RationalKDifferential, a: complex, b: complex, c: complex, d: complex) -> RationalKDifferential:
    """
    Psi written in the coordinate w where z = (a w + b) / (c w + d).

    Args:
        psi: differential in the z coordinate
        a, b, c, d: Mobius coefficients with ad - bc != 0

    Returns:
        The pulled back differential
    """
    det = a * d - b * c
    if det == 0:
        raise ValueError("degenerate Mobius map")
    k = psi.k
    leading = complex(psi.leading) * det ** k
    points: List[Tuple[complex, int]] = []
    for ai, m in psi.finite_points:
        lead = a - c * ai
        if abs(lead) <= 1e-14 * max(1.0, abs(a)):
            leading *= (b - d * ai) ** m
        else:
            leading *= lead ** m
            points.append(((d * ai - b) / lead, m))
    o = psi.order_at_infinity
    if c != 0:
        leading *= c ** o
        if o != 0:
            points.append((-d / c, o))
    else:
        leading *= d ** o
    zeros = [DivisorPoint(z=z, m=m) for z, m in points if m > 0]
    poles = [DivisorPoint(z=z, m=-m) for z, m in points if m < 0]
    return RationalKDifferential(k=k, leading=leading, zeros=zeros, poles=poles)


def _check_regular(psi: RationalKDifferential, z: complex) -> None:
    for a, _ in psi.finite_points:
        if abs(z - a) <= 1e-12 * max(1.0, abs(a)):
            raise SingularPointError(f"point {z} is a singularity")


def kth_root_branch(psi: RationalKDifferential, z: complex, branch: int = 0) -> complex:
    """zeta^branch times the principal k-th root of R(z)."""
    _check_regular(psi, z)
    return zeta(psi.k, branch) * _principal_root(evaluate(psi, z), psi.k)


def _nearest_unit_factor(ratio: complex, k: int) -> complex:
    j = round(cmath.phase(ratio) * k / (2 * math.pi))
    return zeta(k, j)


class SegmentRoot:
    """
    Continuous k-th root of R along the segment z(t) = u + t (v - u), t in [0, 1].

    The log of (t - t_a) has a constant imaginary part on the real axis, so
    the expression is continuous whenever no singularity lies on the segment.
    """

    def __init__(self, psi: RationalKDifferential, u: complex, v: complex):
        self.k = psi.k
        self.u = u
        self.v = v
        span = v - u
        self._terms = [((a - u) / span, m) for a, m in psi.finite_points]
        self._base = cmath.log(complex(psi.leading)) + sum(m for _, m in psi.finite_points) * cmath.log(span)
        self.factor = 1.0 + 0j

    def raw(self, t: float) -> complex:
        total = self._base
        for ta, m in self._terms:
            total += m * cmath.log(t - ta)
        return cmath.exp(total / self.k)

    def anchor(self, t: float, value: complex) -> "SegmentRoot":
        """Fix the branch so the root equals value at parameter t."""
        self.factor = _nearest_unit_factor(value / self.raw(t), self.k)
        return self

    def __call__(self, t: float) -> complex:
        return self.factor * self.raw(float(t))


class RayRoot:
    """Continuous k-th root of R along z(tau) = u + d tau, tau >= 0."""

    def __init__(self, psi: RationalKDifferential, u: complex, d: complex):
        self.k = psi.k
        self.u = u
        self.d = d
        self._terms = [((u - a) / d, m) for a, m in psi.finite_points]
        self._base = cmath.log(complex(psi.leading)) + sum(m for _, m in psi.finite_points) * cmath.log(d)
        self.factor = 1.0 + 0j

    def raw(self, tau: float) -> complex:
        total = self._base
        for offset, m in self._terms:
            total += m * cmath.log(offset + tau)
        return cmath.exp(total / self.k)

    def anchor(self, tau: float, value: complex) -> "RayRoot":
        self.factor = _nearest_unit_factor(value / self.raw(tau), self.k)
        return self

    def __call__(self, tau: float) -> complex:
        return self.factor * self.raw(float(tau))


def _quad(integrand: Callable, points: Sequence[float]) -> complex:
    with mpmath.workdps(20):
        try:
            value = mpmath.quad(integrand, list(points))
        except (ZeroDivisionError, ValueError, OverflowError) as e:
            raise IntegrationError(f"quadrature failed: {e}") from e
    result = complex(value)
    if not (math.isfinite(result.real) and math.isfinite(result.imag)):
        raise IntegrationError("quadrature returned a non-finite value")
    return result


def integrate_segment(psi: RationalKDifferential, u: complex, v: complex,
                      reference: float = 0.5) -> Tuple[complex, SegmentRoot]:
    """
    W-increment along the straight segment u -> v.

    The root branch is the principal root at the reference parameter.
    Endpoints may be conical singularities.

    Returns:
        (integral, root) where root is the anchored continuous branch
    """
    root = SegmentRoot(psi, u, v)
    z_ref = u + reference * (v - u)
    root.anchor(reference, _principal_root(evaluate(psi, z_ref), psi.k))
    span = v - u
    value = _quad(lambda t: root(t) * span, [0, reference, 1])
    return value, root


def integrate_ray(psi: RationalKDifferential, u: complex, d: complex,
                  reference: float = 1.0) -> Tuple[complex, RayRoot]:
    """
    W-increment from u to infinity along the ray u + d tau.

    Requires a conical point at infinity for convergence.
    """
    root = RayRoot(psi, u, d)
    root.anchor(reference, _principal_root(evaluate(psi, u + d * reference), psi.k))

    def integrand(s):
        s = float(s)
        return root(s / (1.0 - s)) * d / (1.0 - s) ** 2

    split = reference / (1.0 + reference)
    return _quad(integrand, [0, split, 1]), root


def continue_root(psi: RationalKDifferential, start: complex, end: complex, value: complex) -> complex:
    """Continue the root value at start along the straight segment to end."""
    root = SegmentRoot(psi, start, end).anchor(0.0, value)
    return root(1.0)


def holonomy_of_z_loop(psi: RationalKDifferential, polyline: Sequence[complex], branch: int = 0) -> int:
    """
    Branch change of the k-th root continued around a closed z-polyline.

    Continuation picks the root nearest to the previous value and halves the
    step when the jump exceeds pi/(2k) in angle or 1.5 in modulus ratio.

    Returns:
        index j with root_end = zeta^j root_start
    """
    k = psi.k
    points = list(polyline)
    if abs(points[0] - points[-1]) > 1e-14:
        points.append(points[0])
    for z in points:
        _check_regular(psi, z)
    units = np.array([zeta(k, j) for j in range(k)])
    y0 = kth_root_branch(psi, points[0], branch)
    y = y0
    for a, b in zip(points[:-1], points[1:]):
        t = 0.0
        h = 1.0 / 16
        while t < 1.0:
            step = min(h, 1.0 - t)
            z = a + (t + step) * (b - a)
            candidates = units * _principal_root(evaluate(psi, z), k)
            y_new = candidates[int(np.argmin(np.abs(candidates - y)))]
            ratio = abs(y_new) / abs(y)
            if abs(cmath.phase(y_new / y)) > math.pi / (2 * k) or not 0.67 <= ratio <= 1.5:
                h = step / 2
                if h < 1e-12:
                    raise IntegrationError(f"step underflow continuing the root near {z}")
                continue
            y = y_new
            t += step
            h = min(step * 1.5, 1.0 / 16)
    return round(cmath.phase(y / y0) * k / (2 * math.pi)) % k


def load_differential(path) -> RationalKDifferential:
    """Read and validate a differential document from disk."""
    with open(path, "r", encoding="utf-8") as f:
        return parse_differential(json.load(f))
