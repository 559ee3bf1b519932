"""RF-slab encoding forward model, noise injection, and synthetic phantom.

A thin-slice volume is partitioned into slabs of AF contiguous slices; each
acquisition mixes the slices of every slab with one row of the encoding
basis, producing a thick-slice volume.  Acquisition simulation applies the
per-RF q-space selection masks and adds seeded Gaussian noise.
"""

from dataclasses import dataclass

import numpy as np

from .qspace import scheme_mask


@dataclass
class DwiVolumeSet:
    """4-D b0-normalized diffusion signal over (x, y, z, q)."""

    values: np.ndarray  # (n_x, n_y, n_z, n_q)
    voxel_size: tuple = (1.0, 1.0, 1.0)  # mm

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4:
            raise ValueError("values must be a 4-D (x, y, z, q) array")
        if any(d <= 0 for d in v.shape):
            raise ValueError("dims and n_q must be strictly positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("volume contains non-finite values")
        self.values = v

    @property
    def dims(self):
        return self.values.shape[:3]

    @property
    def n_q(self):
        return self.values.shape[3]


@dataclass(frozen=True)
class EncodingBasis:
    """AF x AF slab-mixing matrix; row k = weights of RF profile k."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("encoding basis must be square")
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 10.0:
            raise ValueError(f"encoding basis is ill-conditioned (cond={cond:.3g})")

    @property
    def af(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian acquisition noise targeting a spatially-averaged b0 SNR."""

    target_snr: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not self.target_snr > 0:
            raise ValueError("target_snr must be positive")


def default_basis(af=5):
    """All-ones matrix minus twice the identity, af x af.

    Mimics slab excitation with one phase-inverted sub-slice; eigenvalues are
    {af - 2, -2, ...}, condition number 1.5 at af = 5.  Singular at af = 2.
    """
    if af < 2:
        raise ValueError("af must be at least 2")
    if af == 2:
        raise ValueError("singular default basis at af=2; supply one explicitly")
    return EncodingBasis(np.ones((af, af)) - 2.0 * np.eye(af))


def _slabbed(values, af):
    nx, ny, nz, nq = values.shape
    if nz % af != 0:
        raise ValueError(f"n_z={nz} not divisible by AF={af}")
    return values.reshape(nx, ny, nz // af, af, nq)


def downsample(s, basis, k):
    """Thick-slice volume under RF profile k (1-based).

    thick(x, y, slab) = sum_a B[k, a] * thin(x, y, slab*AF + a), per q.
    """
    if not 1 <= k <= basis.af:
        raise ValueError(f"rf index k={k} out of range 1..{basis.af}")
    slabs = _slabbed(s.values, basis.af)
    thick = np.einsum("a,xyzaq->xyzq", basis.matrix[k - 1], slabs)
    return DwiVolumeSet(values=thick, voxel_size=s.voxel_size)


def downsample_adjoint(y, basis, k):
    """Adjoint of downsample: spread B[k, a] * thick back to thin slice a."""
    if not 1 <= k <= basis.af:
        raise ValueError(f"rf index k={k} out of range 1..{basis.af}")
    nx, ny, nslab, nq = y.values.shape
    thin = np.einsum("a,xyzq->xyzaq", basis.matrix[k - 1], y.values)
    return DwiVolumeSet(
        values=thin.reshape(nx, ny, nslab * basis.af, nq),
        voxel_size=y.voxel_size,
    )


def _head_mask(s):
    """Voxels carrying any signal; the b0-normalized b0 image is 1 there."""
    return np.any(s.values != 0.0, axis=3)


def noise_sigma(s, basis, noise, head_mask=None):
    """Noise std giving the target SNR in the thick-slice b0 under profile 1."""
    if not np.isfinite(noise.target_snr):
        return 0.0
    if head_mask is None:
        head_mask = _head_mask(s)
    b0 = DwiVolumeSet(head_mask.astype(np.float64)[..., None], s.voxel_size)
    b0_thick = downsample(b0, basis, 1).values[..., 0]
    mask_thick = _slabbed(head_mask[..., None].astype(np.float64), basis.af)
    mask_thick = np.any(mask_thick[..., 0] > 0, axis=3)
    mean_b0 = np.abs(b0_thick[mask_thick]).mean()
    return float(mean_b0 / noise.target_snr)


def _noise_field(seed, k, j, shape):
    # independent substream per (rf profile, q index): thread-count invariant
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, j)))
    return rng.standard_normal(shape)


def simulate_acquisition(s, basis, scheme, noise, head_mask=None):
    """Simulate the undersampled thick-slice sets Y_k = D_k S Omega_k + eta.

    Returns one thick DwiVolumeSet per RF profile, each restricted to that
    profile's q indices (in scheme order).  Deterministic given the seed.
    """
    sigma = noise_sigma(s, basis, noise, head_mask)
    out = []
    for k in range(1, scheme.n_rf + 1):
        idx = scheme_mask(scheme, k)
        thick = downsample(s, basis, k).values[..., idx]
        if sigma > 0:
            eta = np.stack(
                [
                    _noise_field(noise.seed, k, int(j), thick.shape[:3])
                    for j in idx
                ],
                axis=3,
            )
            thick = thick + sigma * eta
        out.append(DwiVolumeSet(values=thick, voxel_size=s.voxel_size))
    return out


def simulate_hr_acquisition(s, noise, snr_penalty=4.6, head_mask=None):
    """Direct thin-slice acquisition with proportionally lower SNR.

    The b0 SNR is snr_penalty times lower than the thick-slice target, i.e.
    sigma_hr = snr_penalty * mean(b0) / target_snr with an identity operator
    and full q-space.
    """
    if head_mask is None:
        head_mask = _head_mask(s)
    if np.isfinite(noise.target_snr):
        mean_b0 = head_mask.astype(np.float64)[head_mask].mean()  # = 1
        sigma = snr_penalty * mean_b0 / noise.target_snr
    else:
        sigma = 0.0
    values = s.values
    if sigma > 0:
        eta = np.stack(
            [
                _noise_field(noise.seed, 0, j, values.shape[:3])
                for j in range(s.n_q)
            ],
            axis=3,
        )
        values = values + sigma * eta
    return DwiVolumeSet(values=values, voxel_size=s.voxel_size)


# Literature diffusivities (mm^2/s), configuration defaults only.
CSF_DIFFUSIVITY = 3.0e-3
GM_DIFFUSIVITY = 0.8e-3
WM_EIGENVALUES = (1.7e-3, 0.3e-3, 0.3e-3)

LABEL_BACKGROUND = 0
LABEL_CSF = 1
LABEL_GM = 2
LABEL_WM_A = 3  # single tensor along +x
LABEL_WM_B = 4  # single tensor along +z
LABEL_CROSSING = 5  # 50/50 mixture of A and B


def _tensor_signal(directions, bvalue, tensor):
    q = np.asarray(directions)
    return np.exp(-bvalue * np.einsum("qi,ij,qj->q", q, tensor, q))


def phantom_tensors():
    """Region diffusion tensors: WM-A along +x, WM-B along +z."""
    la, lr, _ = WM_EIGENVALUES
    d_a = np.diag([la, lr, lr])
    d_b = np.diag([lr, lr, la])
    return d_a, d_b


def make_phantom(dims, voxel_size, design):
    """Synthetic multi-tensor ground truth and region label volume.

    Two orthogonal rectangular WM bundles (along x and along z) cross at the
    volume center, embedded in a GM ellipsoid that carries a small CSF core
    (offset along y so it does not collide with the bundles).
    """
    nx, ny, nz = dims
    if nx < 16 or ny < 16 or nz < 4:
        raise ValueError("phantom dims too small; need at least (16, 16, 4)")
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0
    x, y, z = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    ellipsoid = (
        ((x - cx) / (0.45 * nx)) ** 2
        + ((y - cy) / (0.45 * ny)) ** 2
        + ((z - cz) / (0.45 * nz)) ** 2
    ) <= 1.0
    # bundle cross-sections sized so white matter is a realistic fraction
    # of the parenchyma (roughly 40%), as in tissue-derived ground truths
    wy = max(1, round(0.18 * ny))
    wz = max(1, round(0.18 * nz))
    wx = max(1, round(0.18 * nx))
    bundle_a = ellipsoid & (np.abs(y - cy) <= wy) & (np.abs(z - cz) <= wz)
    bundle_b = ellipsoid & (np.abs(x - cx) <= wx) & (np.abs(y - cy) <= wy)
    csf = (
        (x - cx) ** 2 + (y - (cy + 0.30 * ny)) ** 2 + (z - cz) ** 2
    ) <= (0.10 * min(nx, ny)) ** 2
    csf &= ellipsoid & ~bundle_a & ~bundle_b

    labels = np.zeros(dims, dtype=np.int16)
    labels[ellipsoid] = LABEL_GM
    labels[csf] = LABEL_CSF
    labels[bundle_a] = LABEL_WM_A
    labels[bundle_b] = LABEL_WM_B
    labels[bundle_a & bundle_b] = LABEL_CROSSING

    b = design.bvalue
    d_a, d_b = phantom_tensors()
    sig = {
        LABEL_BACKGROUND: np.zeros(design.n_q),
        LABEL_CSF: np.full(design.n_q, np.exp(-b * CSF_DIFFUSIVITY)),
        LABEL_GM: np.full(design.n_q, np.exp(-b * GM_DIFFUSIVITY)),
        LABEL_WM_A: _tensor_signal(design.directions, b, d_a),
        LABEL_WM_B: _tensor_signal(design.directions, b, d_b),
        LABEL_CROSSING: 0.5 * _tensor_signal(design.directions, b, d_a)
        + 0.5 * _tensor_signal(design.directions, b, d_b),
    }
    values = np.zeros(dims + (design.n_q,))
    for lab, s in sig.items():
        values[labels == lab] = s
    return DwiVolumeSet(values=values, voxel_size=tuple(voxel_size)), labels
