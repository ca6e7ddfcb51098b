"""
Plane geometry helpers on complex numbers.
"""
import cmath
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


def zeta(k: int, power: int = 1) -> complex:
    """k-th root of unity exp(2 pi i power / k)."""
    return cmath.exp(2j * math.pi * (power % k) / k)


def cross(a: complex, b: complex) -> float:
    return a.real * b.imag - a.imag * b.real


def dot(a: complex, b: complex) -> float:
    return a.real * b.real + a.imag * b.imag


def signed_area(vertices: Sequence[complex]) -> float:
    """Shoelace area, positive for counterclockwise vertex order."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        total += cross(vertices[i], vertices[(i + 1) % n])
    return 0.5 * total


def angle_mod(theta: float, period: float = TWO_PI) -> float:
    """Reduce an angle to [0, period)."""
    value = math.fmod(theta, period)
    if value < 0:
        value += period
    if value >= period:
        value -= period
    return value


def angle_distance(theta: float, period: float) -> float:
    """Distance of theta to the lattice period*Z."""
    value = angle_mod(theta, period)
    return min(value, period - value)


def interior_angle(prev: complex, vertex: complex, nxt: complex) -> float:
    """Counterclockwise angle at vertex from the outgoing to the reversed incoming edge."""
    return angle_mod(cmath.phase((prev - vertex) / (nxt - vertex)))


def point_segment_distance(p: complex, a: complex, b: complex) -> Tuple[float, float]:
    """Distance from p to segment ab and the segment parameter of the foot point."""
    d = b - a
    length2 = abs(d) ** 2
    if length2 == 0:
        return abs(p - a), 0.0
    t = max(0.0, min(1.0, dot(p - a, d) / length2))
    return abs(p - (a + t * d)), t


def ray_segment_hit(origin: complex, direction: complex, a: complex, b: complex,
                    eps: float = 1e-13) -> Optional[Tuple[float, float]]:
    """
    Intersect the ray origin + t*direction (t > 0) with segment ab.

    Returns:
        (t, s) with the ray parameter t and segment parameter s in [0, 1],
        or None when they miss or are parallel.
    """
    e = b - a
    denom = cross(direction, e)
    if abs(denom) <= eps * abs(direction) * abs(e):
        return None
    w = a - origin
    t = cross(w, e) / denom
    s = cross(w, direction) / denom
    if s < -1e-12 or s > 1 + 1e-12:
        return None
    return t, min(1.0, max(0.0, s))


def convex_exit(point: complex, direction: complex, vertices: Sequence[complex]) -> float:
    """
    Ray parameter where point + t*direction leaves a convex CCW polygon.

    The point is assumed to lie in the closed polygon.
    """
    best = math.inf
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        outward = (b - a) * -1j
        speed = dot(outward, direction)
        if speed <= 1e-15 * abs(outward):
            continue
        t = dot(outward, a - point) / speed
        if t < best:
            best = t
    return max(best, 0.0)


def polygon_diameter(points: Sequence[complex]) -> float:
    arr = np.asarray(points, dtype=complex)
    if len(arr) < 2:
        return 0.0
    return float(np.max(np.abs(arr[:, None] - arr[None, :])))


def remove_collinear(vertices: List[complex], keep: Sequence[complex], tol: float) -> List[complex]:
    """Drop vertices with a straight angle unless they are listed in keep."""
    result = list(vertices)
    changed = True
    while changed and len(result) > 3:
        changed = False
        for i in range(len(result)):
            prev, cur, nxt = result[i - 1], result[i], result[(i + 1) % len(result)]
            if any(abs(cur - q) <= tol for q in keep):
                continue
            if abs(cross(cur - prev, nxt - cur)) <= tol * abs(cur - prev) * max(abs(nxt - cur), 1.0):
                if dot(cur - prev, nxt - cur) > 0:
                    result.pop(i)
                    changed = True
                    break
    return result


def incenter(a: complex, b: complex, c: complex) -> Tuple[complex, float]:
    """Incenter and inradius of triangle abc."""
    la, lb, lc = abs(b - c), abs(c - a), abs(a - b)
    perimeter = la + lb + lc
    center = (la * a + lb * b + lc * c) / perimeter
    radius = 2.0 * abs(signed_area([a, b, c])) / perimeter
    return center, radius


def clip_halfplane(vertices: Sequence[complex], normal: complex, offset: float,
                   eps: float = 1e-14) -> List[complex]:
    """Part of a convex polygon where dot(normal, x) <= offset."""
    result: List[complex] = []
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        fa = dot(normal, a) - offset
        fb = dot(normal, b) - offset
        if fa <= eps:
            result.append(a)
        if (fa < -eps and fb > eps) or (fa > eps and fb < -eps):
            t = fa / (fa - fb)
            result.append(a + t * (b - a))
    cleaned: List[complex] = []
    for z in result:
        if not cleaned or abs(z - cleaned[-1]) > 1e-13:
            cleaned.append(z)
    if len(cleaned) > 1 and abs(cleaned[0] - cleaned[-1]) <= 1e-13:
        cleaned.pop()
    return cleaned


def segment_intersection(a: complex, b: complex, c: complex, d: complex,
                         eps: float = 1e-12) -> Optional[Tuple[float, float]]:
    """Parameters (t, s) of the crossing of segments ab and cd, None when disjoint or parallel."""
    e = b - a
    f = d - c
    denom = cross(e, f)
    if abs(denom) <= eps * abs(e) * abs(f):
        return None
    w = c - a
    t = cross(w, f) / denom
    s = cross(w, e) / denom
    if -eps <= t <= 1 + eps and -eps <= s <= 1 + eps:
        return min(1.0, max(0.0, t)), min(1.0, max(0.0, s))
    return None


def is_convex(vertices: Sequence[complex], tol: float = 1e-9) -> bool:
    """Counterclockwise polygon with no reflex corner beyond tol."""
    n = len(vertices)
    if n < 3:
        return False
    scale = max(1.0, polygon_diameter(vertices))
    for i in range(n):
        turn = cross(vertices[i] - vertices[i - 1], vertices[(i + 1) % n] - vertices[i])
        if turn < -tol * scale * scale:
            return False
    return signed_area(vertices) > 0


def centroid(vertices: Sequence[complex]) -> complex:
    """Area centroid of a simple polygon."""
    area = signed_area(vertices)
    if abs(area) < 1e-300:
        return sum(vertices) / len(vertices)
    total = 0j
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        total += (a + b) * cross(a, b)
    return total / (6.0 * area)
