"""Fan-beam CT simulation: phantoms, Siddon projection, FBP and dose noise.

Images are ``(n, n)`` float64 arrays indexed ``[row, col]`` with row 0 at the
top.  Sinograms are ``(n_views, n_detectors)`` arrays of line integrals
expressed in pixel-length units, so a unit-valued pixel crossed along its
full width contributes exactly 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


class GeometryError(ValueError):
    """Invalid geometry, image size, or mismatched array dimensions."""


@dataclass(frozen=True)
class FanGeometry:
    """Flat-detector fan-beam acquisition.

    Lengths share one unit (cm by convention).  Views are spaced uniformly
    over ``angular_range`` starting at angle 0, where the source sits on the
    +x axis.
    """

    source_to_center: float = 40.0
    center_to_detector: float = 40.0
    detector_width: float = 41.3
    n_detectors: int = 128
    n_views: int = 180
    image_size: int = 64
    angular_range: float = 2.0 * math.pi

    def __post_init__(self):
        if self.source_to_center <= 0:
            raise GeometryError("source_to_center must be > 0")
        if self.center_to_detector < 0:
            raise GeometryError("center_to_detector must be >= 0")
        if self.detector_width <= 0:
            raise GeometryError("detector_width must be > 0")
        if self.n_detectors < 1 or self.n_views < 1:
            raise GeometryError("n_detectors and n_views must be >= 1")
        if self.image_size < 1:
            raise GeometryError("image_size must be >= 1")

    @property
    def source_to_detector(self) -> float:
        return self.source_to_center + self.center_to_detector

    @property
    def detector_spacing(self) -> float:
        return self.detector_width / self.n_detectors

    @property
    def fov_radius(self) -> float:
        """Radius of the disk seen by every view."""
        half_fan = math.atan(0.5 * self.detector_width / self.source_to_detector)
        return self.source_to_center * math.sin(half_fan)

    @property
    def pixel_size(self) -> float:
        # square image inscribed in the field-of-view disk
        return math.sqrt(2.0) * self.fov_radius / self.image_size

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_views) * (self.angular_range / self.n_views)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_detectors)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_size, self.image_size)

    def detector_positions(self) -> np.ndarray:
        """Detector cell centres along the detector line, in pixel units."""
        d = np.arange(self.n_detectors) - 0.5 * (self.n_detectors - 1)
        return d * (self.detector_spacing / self.pixel_size)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Ray endpoints ``(sources, targets)``, each ``(n_views, n_det, 2)``.

        Coordinates are in pixel units with the isocentre at the origin, x to
        the right and y up.  Each ray ends at a detector cell centre.
        """
        ps = self.pixel_size
        sod = self.source_to_center / ps
        cdd = self.center_to_detector / ps
        beta = self.angles
        ray_dir = np.stack([np.cos(beta), np.sin(beta)], axis=-1)
        det_dir = np.stack([-np.sin(beta), np.cos(beta)], axis=-1)
        u = self.detector_positions()
        src = np.broadcast_to((sod * ray_dir)[:, None, :],
                              (self.n_views, self.n_detectors, 2))
        tgt = -cdd * ray_dir[:, None, :] + u[None, :, None] * det_dir[:, None, :]
        return np.ascontiguousarray(src), np.ascontiguousarray(tgt)


@dataclass(frozen=True)
class DoseModel:
    """Incident photon count with optional Gaussian read noise.

    ``photon_count=math.inf`` disables noise entirely.
    """

    photon_count: float = 1e5
    electronic_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.photon_count > 0:
            raise ValueError("photon_count must be > 0")
        if self.electronic_sigma < 0:
            raise ValueError("electronic_sigma must be >= 0")


# -- phantoms ---------------------------------------------------------------

# (intensity, semi-axis a, semi-axis b, centre x, centre y, rotation degrees)
# Modified Shepp-Logan (Toft) intensities on the unit square [-1, 1]^2.
SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def pixel_centers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised ``(x, y)`` coordinates of pixel centres in [-1, 1]."""
    c = (np.arange(n) - 0.5 * (n - 1)) * (2.0 / n)
    x = np.broadcast_to(c[None, :], (n, n))
    y = np.broadcast_to(-c[:, None], (n, n))
    return x, y


def _paint_ellipses(n: int, ellipses) -> np.ndarray:
    x, y = pixel_centers(n)
    img = np.zeros((n, n))
    for val, a, b, x0, y0, deg in ellipses:
        th = math.radians(deg)
        c, s = math.cos(th), math.sin(th)
        xr = (x - x0) * c + (y - y0) * s
        yr = -(x - x0) * s + (y - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return img


def _random_ellipses(rng: np.random.Generator) -> list[tuple]:
    # a body ellipse plus a handful of inner structures, all inside the unit disk
    a, b = rng.uniform(0.55, 0.8), rng.uniform(0.55, 0.8)
    body = (rng.uniform(0.4, 0.6), a, b, 0.0, 0.0, rng.uniform(-30, 30))
    out = [body]
    for _ in range(int(rng.integers(3, 9))):
        ea = rng.uniform(0.04, 0.3) * a
        eb = rng.uniform(0.04, 0.3) * b
        r = rng.uniform(0.0, 0.6)
        phi = rng.uniform(0, 2 * math.pi)
        out.append((rng.uniform(-0.35, 0.45), ea, eb,
                    r * a * math.cos(phi), r * b * math.sin(phi),
                    rng.uniform(0, 180)))
    return out


def make_phantom(kind: str, n: int, seed: int = 0) -> np.ndarray:
    """Return an ``n x n`` phantom clamped to [0, 1].

    ``kind`` is ``"shepp_logan"`` or ``"random_ellipses"``; the latter is a
    deterministic function of ``seed``.
    """
    if n < 8:
        raise GeometryError(f"phantom size must be >= 8, got {n}")
    if kind == "shepp_logan":
        img = _paint_ellipses(n, SHEPP_LOGAN)
    elif kind == "random_ellipses":
        img = _paint_ellipses(n, _random_ellipses(np.random.default_rng(seed)))
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return np.clip(img, 0.0, 1.0)


# -- Siddon forward projection -------------------------------------------------

@numba.njit(cache=True)
def _next_plane(p, half, forward):
    """Index k of the first grid plane ``k - half`` strictly beyond ``p``."""
    # floor/ceil of p + half can be off by one when the shift rounds, so the
    # result is checked against the exact plane coordinates
    if forward:
        k = math.floor(p + half) + 1
        while k - 1 - half > p:
            k -= 1
        while k - half <= p:
            k += 1
    else:
        k = math.ceil(p + half) - 1
        while k + 1 - half < p:
            k += 1
        while k - half >= p:
            k -= 1
    return k


@numba.njit(cache=True)
def _siddon_ray(img, n, x0, y0, x1, y1):
    # Pixel column j spans x in [j - n/2, j + 1 - n/2); row i spans
    # y in (n/2 - i - 1, n/2 - i].  A ray running along a pixel edge is
    # charged to one side only.
    half = 0.5 * n
    dx = x1 - x0
    dy = y1 - y0
    amin = 0.0
    amax = 1.0
    if dx != 0.0:
        ax0 = (-half - x0) / dx
        ax1 = (half - x0) / dx
        amin = max(amin, min(ax0, ax1))
        amax = min(amax, max(ax0, ax1))
    elif x0 < -half or x0 >= half:
        return 0.0
    if dy != 0.0:
        ay0 = (-half - y0) / dy
        ay1 = (half - y0) / dy
        amin = max(amin, min(ay0, ay1))
        amax = min(amax, max(ay0, ay1))
    elif y0 <= -half or y0 > half:
        return 0.0
    if amax <= amin:
        return 0.0

    length = math.sqrt(dx * dx + dy * dy)
    # next plane crossing and increments along each axis
    if dx != 0.0:
        ax = (_next_plane(x0 + dx * amin, half, dx > 0.0) - half - x0) / dx
        dax = 1.0 / abs(dx)
    else:
        ax = math.inf
        dax = 0.0
    if dy != 0.0:
        ay = (_next_plane(y0 + dy * amin, half, dy > 0.0) - half - y0) / dy
        day = 1.0 / abs(dy)
    else:
        ay = math.inf
        day = 0.0

    total = 0.0
    a_prev = amin
    while a_prev < amax:
        a_next = min(ax, ay, amax)
        if a_next > a_prev:
            a_mid = 0.5 * (a_prev + a_next)
            xm = x0 + dx * a_mid
            ym = y0 + dy * a_mid
            col = int(math.floor(xm + half))
            row = int(math.floor(half - ym))
            # shifting by half can round a point just off an edge onto it;
            # settle the side against the (exact) edge coordinates instead
            if xm < col - half:
                col -= 1
            elif xm >= col + 1 - half:
                col += 1
            if ym > half - row:
                row -= 1
            elif ym <= half - row - 1:
                row += 1
            if 0 <= col < n and 0 <= row < n:
                total += (a_next - a_prev) * length * img[row, col]
        a_prev = a_next
        if ax <= a_next:
            ax += dax
        if ay <= a_next:
            ay += day
    return total


@numba.njit(cache=True)
def _project_all(img, src, tgt):
    nv, nd = src.shape[0], src.shape[1]
    n = img.shape[0]
    out = np.empty((nv, nd))
    for v in range(nv):
        for d in range(nd):
            out[v, d] = _siddon_ray(img, n, src[v, d, 0], src[v, d, 1],
                                    tgt[v, d, 0], tgt[v, d, 1])
    return out


def siddon_line_integrals(img: np.ndarray, sources: np.ndarray,
                          targets: np.ndarray) -> np.ndarray:
    """Line integrals of ``img`` along arbitrary segments (pixel units).

    ``sources`` and ``targets`` have shape ``(..., 2)``.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise GeometryError(f"expected a square image, got {img.shape}")
    shape = sources.shape[:-1]
    src = np.ascontiguousarray(sources, dtype=np.float64).reshape(1, -1, 2)
    tgt = np.ascontiguousarray(targets, dtype=np.float64).reshape(1, -1, 2)
    return _project_all(img, src, tgt).reshape(shape)


def forward_project(img: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """Siddon ray-driven fan-beam projection of ``img``."""
    if img.shape != geom.image_shape:
        raise GeometryError(f"image shape {img.shape} does not match geometry "
                            f"{geom.image_shape}")
    src, tgt = geom.rays()
    return siddon_line_integrals(img, src, tgt)


# -- filtered back-projection --------------------------------------------------

def ramp_kernel(n: int, spacing: float, window: str = "hann") -> np.ndarray:
    """Frequency response of the band-limited ramp filter, length ``2**k >= 2n``.

    Built from the discrete spatial-domain ramp so the DC term is not zeroed;
    ``window="hann"`` applies a raised-cosine apodisation.
    """
    size = 1 << int(math.ceil(math.log2(max(2 * n, 2))))
    k = np.arange(size)
    k = np.where(k > size // 2, k - size, k)
    h = np.zeros(size)
    h[k == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = (k % 2) != 0
    h[odd] = -1.0 / (math.pi * k[odd] * spacing) ** 2
    resp = np.real(np.fft.fft(h)) * spacing
    if window == "hann":
        f = np.fft.fftfreq(size)
        resp = resp * (0.5 + 0.5 * np.cos(2.0 * math.pi * f))
    elif window != "ramp":
        raise ValueError(f"unknown filter window {window!r}")
    return resp


def fbp(sino: np.ndarray, geom: FanGeometry, window: str = "hann") -> np.ndarray:
    """Fan-beam filtered back-projection for a flat detector.

    Cosine pre-weighting, detector-axis ramp filtering and 1/U^2-weighted
    back-projection with linear interpolation.  Linear in ``sino``.
    """
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geom.sinogram_shape:
        raise GeometryError(f"sinogram shape {sino.shape} does not match "
                            f"geometry {geom.sinogram_shape}")
    ps = geom.pixel_size
    sod = geom.source_to_center / ps
    mag = geom.source_to_detector / geom.source_to_center
    # detector coordinates rescaled to the isocentre plane
    s = geom.detector_positions() / mag
    ds = geom.detector_spacing / ps / mag
    weighted = sino * (sod / np.sqrt(sod ** 2 + s ** 2))[None, :]

    resp = ramp_kernel(geom.n_detectors, ds, window)
    size = resp.shape[0]
    padded = np.zeros((geom.n_views, size))
    padded[:, : geom.n_detectors] = weighted
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * resp[None, :],
                                   axis=1))[:, : geom.n_detectors]

    n = geom.image_size
    c = np.arange(n) - 0.5 * (n - 1)
    x = np.broadcast_to(c[None, :], (n, n)).ravel()
    y = np.broadcast_to(-c[:, None], (n, n)).ravel()
    d_beta = geom.angular_range / geom.n_views
    img = np.zeros(n * n)
    for beta, q in zip(geom.angles, filtered):
        cb, sb = math.cos(beta), math.sin(beta)
        depth = sod - (x * cb + y * sb)
        u = sod * (-x * sb + y * cb) / depth
        img += np.interp(u, s, q, left=0.0, right=0.0) * (sod / depth) ** 2
    # each ray is measured twice over a full rotation
    scale = d_beta * (math.pi / geom.angular_range)
    return (img * scale).reshape(n, n)


# -- dose simulation -------------------------------------------------------

def simulate_low_dose(sino: np.ndarray, dose: DoseModel) -> np.ndarray:
    """Poisson (plus optional Gaussian) noise on transmitted counts.

    Each line integral ``x`` becomes ``-ln(max(N, 1) / I0)`` with
    ``N ~ Poisson(I0 exp(-x)) + Normal(0, electronic_sigma^2)``.
    """
    sino = np.asarray(sino, dtype=np.float64)
    if math.isinf(dose.photon_count):
        return sino.copy()
    rng = np.random.default_rng(dose.seed)
    i0 = dose.photon_count
    counts = rng.poisson(i0 * np.exp(-sino)).astype(np.float64)
    if dose.electronic_sigma > 0:
        counts = counts + rng.normal(0.0, dose.electronic_sigma, size=sino.shape)
    return -np.log(np.maximum(counts, 1.0) / i0)
