"""Lebedev quadrature grids on the sphere.

Point sets with octahedral symmetry that integrate spherical polynomials
exactly up to a grid-dependent algebraic degree. Coordinates are unit
vectors; weights are returned scaled to sum to 4*pi so that
``sum(w * f(x))`` approximates the surface integral of ``f`` over the
unit sphere.

Available sizes and their polynomial degrees:

======  ======
points  degree
======  ======
6       3
14      5
26      7
38      9
50      11
74      13
86      15
110     17
146     19
170     21
194     23
======  ======

The generator constants follow the classic Lebedev-Laikov tabulation.
"""

import itertools

import numpy as np

__all__ = ["lebedev_grid", "min_degree_grid", "LEBEDEV_SIZES"]


def _gen_oh(code, v, a=None, b=None):
    """Generate one symmetry orbit of the octahedral group.

    code 0: 6 points  (1,0,0)-type
    code 1: 12 points (1,1,0)/sqrt(2)-type
    code 2: 8 points  (1,1,1)/sqrt(3)-type
    code 3: 24 points (a,a,b)-type with b = sqrt(1-2a^2)
    code 4: 24 points (a,b,0)-type with b = sqrt(1-a^2)
    code 5: 48 points (a,b,c)-type with c = sqrt(1-a^2-b^2)
    """
    if code == 0:
        xyz = np.array([(1, 0, 0), (-1, 0, 0), (0, 1, 0),
                        (0, -1, 0), (0, 0, 1), (0, 0, -1)], dtype=float)
    elif code == 1:
        a = np.sqrt(0.5)
        xyz = []
        for i, j in [(1, 2), (0, 2), (0, 1)]:
            for si in (a, -a):
                for sj in (a, -a):
                    p = [0.0, 0.0, 0.0]
                    p[i], p[j] = si, sj
                    xyz.append(p)
        xyz = np.array(xyz)
    elif code == 2:
        a = np.sqrt(1.0 / 3.0)
        xyz = np.array([(sx * a, sy * a, sz * a)
                        for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)])
    elif code == 3:
        b = np.sqrt(1.0 - 2.0 * a * a)
        xyz = []
        for b_axis in (2, 1, 0):
            a_axes = [ax for ax in range(3) if ax != b_axis]
            for s1 in (a, -a):
                for s2 in (a, -a):
                    for sb in (b, -b):
                        p = [0.0, 0.0, 0.0]
                        p[a_axes[0]], p[a_axes[1]], p[b_axis] = s1, s2, sb
                        xyz.append(p)
        xyz = np.array(xyz)
    elif code == 4:
        b = np.sqrt(1.0 - a * a)
        xyz = []
        for ia in range(3):
            for ib in range(3):
                if ia == ib:
                    continue
                for sa in (a, -a):
                    for sb in (b, -b):
                        p = [0.0, 0.0, 0.0]
                        p[ia], p[ib] = sa, sb
                        xyz.append(p)
        xyz = np.array(xyz)
    elif code == 5:
        c = np.sqrt(1.0 - a * a - b * b)
        xyz = []
        for perm in itertools.permutations(range(3)):
            for sa in (1, -1):
                for sb in (1, -1):
                    for sc in (1, -1):
                        vals = (sa * a, sb * b, sc * c)
                        p = [0.0, 0.0, 0.0]
                        for axis, val in zip(perm, vals):
                            p[axis] = val
                        xyz.append(p)
        xyz = np.array(xyz)
    else:
        raise ValueError(f"unknown orbit code {code}")
    w = np.full(len(xyz), v)
    return xyz, w


# (code, weight, a, b) rows per grid size; weights sum to 1 before scaling.
_RULES = {
    6: [(0, 0.1666666666666667, None, None)],
    14: [(0, 0.6666666666666667e-1, None, None),
         (2, 0.7500000000000000e-1, None, None)],
    26: [(0, 0.4761904761904762e-1, None, None),
         (1, 0.3809523809523810e-1, None, None),
         (2, 0.3214285714285714e-1, None, None)],
    38: [(0, 0.9523809523809524e-2, None, None),
         (2, 0.3214285714285714e-1, None, None),
         (4, 0.2857142857142857e-1, 0.4597008433809831, None)],
    50: [(0, 0.1269841269841270e-1, None, None),
         (1, 0.2257495590828924e-1, None, None),
         (2, 0.2109375000000000e-1, None, None),
         (3, 0.2017333553791887e-1, 0.3015113445777636, None)],
    74: [(0, 0.5130671797338464e-3, None, None),
         (1, 0.1660406956574204e-1, None, None),
         (2, -0.2958603896103896e-1, None, None),
         (3, 0.2657620708215946e-1, 0.4803844614152614, None),
         (4, 0.1652217099371571e-1, 0.3207726489807764, None)],
    86: [(0, 0.1154401154401154e-1, None, None),
         (2, 0.1194390908585628e-1, None, None),
         (3, 0.1111055571060340e-1, 0.3696028464541502, None),
         (3, 0.1187650129453714e-1, 0.6943540066026664, None),
         (4, 0.1181230374690448e-1, 0.3742430390903412, None)],
    110: [(0, 0.3828270494937162e-2, None, None),
          (2, 0.9793737512487512e-2, None, None),
          (3, 0.8211737283191111e-2, 0.1851156353447362, None),
          (3, 0.9942814891178103e-2, 0.6904210483822922, None),
          (3, 0.9595471336070963e-2, 0.3956894730559419, None),
          (4, 0.9694996361663028e-2, 0.4783690288121502, None)],
    146: [(0, 0.5996313688621381e-3, None, None),
          (1, 0.7372999718620756e-2, None, None),
          (2, 0.7210515360144488e-2, None, None),
          (3, 0.7116355493117555e-2, 0.6764410400114264, None),
          (3, 0.6753829486314477e-2, 0.4174961227965453, None),
          (3, 0.7574394159054034e-2, 0.1574676672039082, None),
          (5, 0.6991087353303262e-2, 0.1403553811713183, 0.4493328323269557)],
    170: [(0, 0.5544842902037365e-2, None, None),
          (1, 0.6071332770670752e-2, None, None),
          (2, 0.6383674773515093e-2, None, None),
          (3, 0.5183387587747790e-2, 0.2551252621114134, None),
          (3, 0.6317929009813725e-2, 0.6743601460362766, None),
          (3, 0.6201670006589077e-2, 0.4318910696719410, None),
          (4, 0.5477143385137348e-2, 0.2613931360335988, None),
          (5, 0.5968383987681156e-2, 0.4990453161796037, 0.1446630744325115)],
    194: [(0, 0.1782340447244611e-2, None, None),
          (1, 0.5716905949977102e-2, None, None),
          (2, 0.5573383178848738e-2, None, None),
          (3, 0.5608704082587997e-2, 0.6712973442695226, None),
          (3, 0.5158237711805383e-2, 0.2892465627575439, None),
          (3, 0.5518771467273614e-2, 0.4446933178717437, None),
          (3, 0.4106777028169394e-2, 0.1299335447650067, None),
          (4, 0.5051846064614808e-2, 0.3457702197611283, None),
          (5, 0.5530248916233094e-2, 0.1590417105383530, 0.8360360154824589)],
}

LEBEDEV_SIZES = tuple(sorted(_RULES))

_DEGREES = {6: 3, 14: 5, 26: 7, 38: 9, 50: 11, 74: 13, 86: 15, 110: 17,
            146: 19, 170: 21, 194: 23}


def lebedev_grid(n_points):
    """Return a Lebedev grid as ``(xyz, weights)``.

    Parameters
    ----------
    n_points : int
        One of :data:`LEBEDEV_SIZES`.

    Returns
    -------
    xyz : (n_points, 3) ndarray
        Unit vectors.
    weights : (n_points,) ndarray
        Quadrature weights, sum = 4*pi.
    """
    if n_points not in _RULES:
        raise ValueError(
            f"no {n_points}-point Lebedev grid; available: {LEBEDEV_SIZES}")
    xs, ws = [], []
    for code, v, a, b in _RULES[n_points]:
        xyz, w = _gen_oh(code, v, a, b)
        xs.append(xyz)
        ws.append(w)
    xyz = np.vstack(xs)
    w = np.concatenate(ws)
    assert len(xyz) == n_points
    return xyz, 4.0 * np.pi * w


def min_degree_grid(degree):
    """Smallest bundled grid exact for spherical polynomials of `degree`."""
    for n, d in sorted(_DEGREES.items()):
        if d >= degree:
            return lebedev_grid(n)
    raise ValueError(f"no bundled grid reaches degree {degree}")
