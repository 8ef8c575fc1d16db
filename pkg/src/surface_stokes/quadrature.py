"""Quadrature rules on the reference triangle and on edges."""
import numpy as np

_A = 0.445948490915965
_B = 0.091576213509771
_WA = 0.223381589678011
_WB = 0.109951743655322


def face_rule():
    """Degree-4 six-point rule: barycentric points (6, 3), weights summing to 1."""
    pts = np.array(
        [
            [_A, _A, 1 - 2 * _A], [_A, 1 - 2 * _A, _A], [1 - 2 * _A, _A, _A],
            [_B, _B, 1 - 2 * _B], [_B, 1 - 2 * _B, _B], [1 - 2 * _B, _B, _B],
        ]
    )
    w = np.array([_WA] * 3 + [_WB] * 3)
    return pts, w / w.sum()


def edge_rule(n: int = 3):
    """Gauss rule on s in [-1/2, 1/2] with weights summing to 1 (degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * x, 0.5 * w
