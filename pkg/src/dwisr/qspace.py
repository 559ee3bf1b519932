"""q-space direction sets and complementary q-space / RF undersampling schemes.

Directions live on the y >= 0 hemisphere and are ordered along a golden-angle
spherical spiral starting at the pole (0, 1, 0).  Undersampling schemes assign
each direction (round-robin along the spiral) to a group, and each group to a
fixed subset of the five RF-encoding profiles.
"""

from dataclasses import dataclass

import numpy as np

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

# Group -> RF-profile subsets (1-based) for each acceleration factor.
# Factor R splits the spiral-ordered directions into R interleaved groups;
# group g is encoded only by the listed profiles.
RF_SUBSETS = {
    1: {1: (1, 2, 3, 4, 5)},
    2: {1: (1, 3, 5), 2: (2, 4)},
    3: {1: (1, 4), 2: (2, 5), 3: (3,)},
    4: {1: (1, 5), 2: (2,), 3: (3,), 4: (4,)},
    5: {1: (1,), 2: (2,), 3: (3,), 4: (4,), 5: (5,)},
}

N_RF = 5


@dataclass(frozen=True)
class QSpaceDesign:
    """Ordered unit gradient directions on the hemisphere, single shell."""

    directions: np.ndarray  # (n_q, 3), unit norm, y >= 0, spiral order
    bvalue: float  # s/mm^2
    n_b0: int = 1

    @property
    def n_q(self):
        return self.directions.shape[0]

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        object.__setattr__(self, "directions", d)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ValueError("directions must be an (n, 3) array")
        norms = np.linalg.norm(d, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-12):
            raise ValueError("directions must have unit norm within 1e-12")
        if np.any(d[:, 1] < 0):
            raise ValueError("directions must lie on the y >= 0 hemisphere")


@dataclass(frozen=True)
class SamplingScheme:
    """Per-RF-encoding selection of q-space indices (0-based, sorted)."""

    n_rf: int
    assignments: tuple  # tuple of n_rf sorted tuples of 0-based q indices
    acceleration_label: str

    @property
    def n_q(self):
        return 1 + max(max(a) for a in self.assignments if a)

    @property
    def total_acquisitions(self):
        return sum(len(a) for a in self.assignments)

    def __post_init__(self):
        seen = set()
        for k, idx in enumerate(self.assignments):
            if list(idx) != sorted(idx):
                raise ValueError("assignments must be sorted per RF index")
            for j in idx:
                if (k, j) in seen:
                    raise ValueError("duplicate (rf, q) pair in scheme")
                seen.add((k, j))
        covered = set(j for idx in self.assignments for j in idx)
        if covered != set(range(self.n_q)):
            raise ValueError("scheme must cover every q index at least once")


def spiral_unit_vectors(n):
    """Raw golden-angle spiral on the y >= 0 hemisphere, pole first.

    No minimum-count restriction; used for q-space designs and for
    dictionary atom orientations alike.
    """
    if n < 1:
        raise ValueError("need at least one direction")
    if n == 1:
        return np.array([[0.0, 1.0, 0.0]])
    i = np.arange(n, dtype=np.float64)
    cos_theta = 1.0 - i / (n - 1)
    sin_theta = np.sqrt(np.maximum(0.0, 1.0 - cos_theta**2))
    phi = i * GOLDEN_ANGLE
    # spiral built around +z, then rotated (+z -> +y) by -90 deg about x
    dirs = np.stack(
        [sin_theta * np.cos(phi), cos_theta, -sin_theta * np.sin(phi)], axis=1
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def spiral_directions(n, bvalue=2000.0, n_b0=1):
    """Generate n unit directions on the y >= 0 hemisphere along a spiral.

    Polar angle (from +y) follows theta_i = arccos(1 - i/(n-1)); azimuth
    advances by the golden angle.  The first direction is the pole (0, 1, 0),
    the last lies on the equator.  Deterministic: identical n gives
    bit-identical output.
    """
    if n < 6:
        raise ValueError("spiral_directions requires n >= 6")
    dirs = spiral_unit_vectors(n)
    return QSpaceDesign(directions=dirs, bvalue=float(bvalue), n_b0=n_b0)


def group_of(j, factor):
    """1-based group of the 1-based q index j under round-robin interleave."""
    return (j - 1) % factor + 1


def make_scheme(design, factor):
    """Build the complementary q-space / RF undersampling scheme.

    Directions are grouped round-robin along the spiral order; each group is
    encoded by the hard-coded RF-profile subset for the given acceleration
    factor.  Depends only on index order, never on direction coordinates.
    """
    if factor not in RF_SUBSETS:
        raise ValueError("acceleration factor must be one of 1..5")
    n_q = design.n_q
    subsets = RF_SUBSETS[factor]
    assignments = [[] for _ in range(N_RF)]
    for j in range(1, n_q + 1):
        g = group_of(j, factor)
        for k in subsets[g]:
            assignments[k - 1].append(j - 1)
    return SamplingScheme(
        n_rf=N_RF,
        assignments=tuple(tuple(a) for a in assignments),
        acceleration_label=f"{factor}X",
    )


def scheme_mask(scheme, k):
    """Ordered 0-based q indices encoded by RF profile k (1-based)."""
    if not 1 <= k <= scheme.n_rf:
        raise ValueError(f"rf index k={k} out of range 1..{scheme.n_rf}")
    return np.asarray(scheme.assignments[k - 1], dtype=np.intp)
