"""Over-complete spherical-ridgelet dictionary and spherical-harmonic tools.

Atoms are even functions on the sphere built from a Gaussian-type generating
kernel kappa(x) = exp(-rho * x * (x + 1)) evaluated on the Laplace-Beltrami
spectrum, combined across dyadic resolution levels.  The dictionary matrix
samples every atom at the q-space directions; columns are normalized to unit
norm with the scales recorded so atoms can be re-evaluated consistently on
any direction set (used for dense resampling before ODF computation).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_legendre, sph_harm_y

from .qspace import spiral_unit_vectors

DEFAULT_RHO = 0.5
DEFAULT_N_MAX = 20
DEFAULT_LEVELS = (-1, 0, 1)
DEFAULT_ORIENTATIONS = (16, 64, 256)


def legendre_at_zero(n_even):
    """P_n(0) for the even degrees in n_even, by the double-factorial rule."""
    out = []
    p = 1.0
    k = 0
    for n in n_even:
        while k < n:
            k += 2
            p *= -(k - 1) / k
        out.append(p)
    return np.asarray(out)


def funk_radon_weights(n_even):
    """Funk-Radon transform eigenvalues 2*pi*P_n(0) per even degree."""
    return 2.0 * np.pi * legendre_at_zero(n_even)


def _level_kernel(level, n_even, rho):
    """Spectral weights of one resolution level on even degrees."""
    def kappa(j, n):
        x = np.ldexp(np.asarray(n, dtype=np.float64), -j)
        return np.exp(-rho * x * (x + 1.0))

    n_even = np.asarray(n_even, dtype=np.float64)
    if level < 0:  # coarsest: the generating kernel itself
        return kappa(0, n_even)
    return kappa(level + 1, n_even) - kappa(level, n_even)


@dataclass(frozen=True)
class RidgeletDictionary:
    matrix: np.ndarray  # (n_q, m), unit-norm columns
    levels: tuple
    orientations_per_level: tuple
    rho: float
    n_max: int
    column_scales: np.ndarray  # (m,) pre-normalization column norms
    orientations: tuple = field(repr=False, default=())  # per-level (m_j, 3)

    @property
    def n_q(self):
        return self.matrix.shape[0]

    @property
    def n_atoms(self):
        return self.matrix.shape[1]


def _raw_atom_values(directions, levels, orientations, rho, n_max):
    """Evaluate all un-normalized atoms at the given unit directions."""
    directions = np.asarray(directions, dtype=np.float64)
    n_even = np.arange(0, n_max + 1, 2)
    fr = legendre_at_zero(n_even)  # P_n(0); lambda_n = 2*pi*P_n(0)
    blocks = []
    for level, orient in zip(levels, orientations):
        w = _level_kernel(level, n_even, rho)
        # (2n+1)/(4*pi) * lambda_n * w_j(n), with lambda_n = 2*pi*P_n(0)
        coef = (2.0 * n_even + 1.0) / 2.0 * fr * w
        dots = np.clip(directions @ orient.T, -1.0, 1.0)
        vals = np.zeros_like(dots)
        for c, n in zip(coef, n_even):
            vals += c * eval_legendre(int(n), dots)
        blocks.append(vals)
    return np.concatenate(blocks, axis=1)


def build_dictionary(
    design,
    rho=DEFAULT_RHO,
    levels=DEFAULT_LEVELS,
    orientations_per_level=DEFAULT_ORIENTATIONS,
    n_max=DEFAULT_N_MAX,
):
    """Build the dictionary matrix sampled at the design's directions.

    Atom orientations are hemisphere spirals (one per level); atoms are even,
    so hemisphere coverage is complete.  Deterministic for fixed inputs.
    """
    if design.n_q == 0:
        raise ValueError("empty q-space design")
    if rho <= 0:
        raise ValueError("rho must be positive")
    if len(levels) == 0:
        raise ValueError("levels must be nonempty")
    if any(m < 4 for m in orientations_per_level):
        raise ValueError("need at least 4 orientations per level")
    if len(levels) != len(orientations_per_level):
        raise ValueError("levels and orientation counts must align")
    if n_max % 2 != 0:
        raise ValueError("n_max must be even")
    orients = tuple(spiral_unit_vectors(m) for m in orientations_per_level)
    raw = _raw_atom_values(design.directions, levels, orients, rho, n_max)
    scales = np.linalg.norm(raw, axis=0)
    if np.any(scales <= 0):
        raise ValueError("degenerate (zero-norm) dictionary atom")
    return RidgeletDictionary(
        matrix=raw / scales,
        levels=tuple(levels),
        orientations_per_level=tuple(orientations_per_level),
        rho=float(rho),
        n_max=int(n_max),
        column_scales=scales,
        orientations=orients,
    )


def evaluate_atoms(dictionary, directions):
    """Atoms resampled at new unit directions, in normalized-column units."""
    raw = _raw_atom_values(
        directions,
        dictionary.levels,
        dictionary.orientations,
        dictionary.rho,
        dictionary.n_max,
    )
    return raw / dictionary.column_scales


def fit_coefficients_ls(dictionary, signal, ridge=0.0):
    """Ridge least-squares coefficients: argmin |A c - s|^2 + ridge |c|^2.

    signal may be a single (n_q,) vector or a batch (..., n_q); the
    coefficient axis is appended last.  ridge = 0 falls back to the
    minimum-norm solution.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    a = dictionary.matrix
    s = np.asarray(signal, dtype=np.float64)
    batch = s.reshape(-1, a.shape[0]).T  # (n_q, nvox)
    if ridge == 0.0:
        c = np.linalg.pinv(a) @ batch
    else:
        gram = a.T @ a + ridge * np.eye(a.shape[1])
        c = np.linalg.solve(gram, a.T @ batch)
    return c.T.reshape(s.shape[:-1] + (a.shape[1],))


@dataclass(frozen=True)
class SHBasis:
    """Real even-degree spherical-harmonic evaluation matrix."""

    degree: int
    matrix: np.ndarray  # (n_dirs, n_coef)
    col_degrees: np.ndarray  # (n_coef,) degree of each column

    @property
    def n_dirs(self):
        return self.matrix.shape[0]


def sh_basis(directions, degree=8):
    """Real even SH basis evaluated at unit directions.

    Columns are ordered by even degree n, then order m = -n..n; real basis
    from the complex harmonics in the usual way (sqrt(2) * Im / Re parts).
    """
    if degree % 2 != 0:
        raise ValueError("degree must be even")
    d = np.asarray(directions, dtype=np.float64)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))  # polar from +z
    phi = np.arctan2(d[:, 1], d[:, 0])
    cols = []
    degs = []
    for n in range(0, degree + 1, 2):
        for m in range(-n, n + 1):
            y = sph_harm_y(n, abs(m), theta, phi)
            if m < 0:
                col = np.sqrt(2.0) * (-1.0) ** m * y.imag
            elif m == 0:
                col = y.real
            else:
                col = np.sqrt(2.0) * (-1.0) ** m * y.real
            cols.append(col)
            degs.append(n)
    return SHBasis(
        degree=degree,
        matrix=np.stack(cols, axis=1),
        col_degrees=np.asarray(degs),
    )


def odf_from_signal(signal, sh):
    """ODF on the tessellation via the Funk-Radon transform in SH space.

    signal is sampled at the same directions the basis was built on; shape
    (n_dirs,) or batched (..., n_dirs).  Output is min-max normalized to
    [0, 1] per voxel; an all-equal ODF normalizes to all zeros.
    """
    if sh.n_dirs < 100:
        raise ValueError("tessellation too coarse for ODF estimation")
    s = np.asarray(signal, dtype=np.float64)
    batch = s.reshape(-1, sh.n_dirs)
    coef, *_ = np.linalg.lstsq(sh.matrix, batch.T, rcond=None)
    w = funk_radon_weights(sh.col_degrees)
    odf = (sh.matrix @ (w[:, None] * coef)).T
    lo = odf.min(axis=1, keepdims=True)
    hi = odf.max(axis=1, keepdims=True)
    span = hi - lo
    flat = span <= 1e-12 * np.maximum(1.0, np.abs(hi))
    span = np.where(flat, 1.0, span)
    odf = np.where(flat, 0.0, (odf - lo) / span)
    return odf.reshape(s.shape[:-1] + (sh.n_dirs,))


def icosphere(subdivisions=3):
    """Subdivided icosahedron: (vertices, faces) on the unit sphere.

    3 subdivisions give 642 vertices (~4 degree spacing), the default
    resolution for ODF peak detection.
    """
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        vlist = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(vlist[i]) + np.asarray(vlist[j])
                m /= np.linalg.norm(m)
                cache[key] = len(vlist)
                vlist.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts, faces = vlist, new_faces
    return np.asarray(verts), np.asarray(faces, dtype=np.intp)
