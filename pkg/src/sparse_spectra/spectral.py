"""Eigenvalue and singular-value measures, log-potentials and trace moments."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from . import kernels
from .errors import InvalidParameter
from .model import BinaryMatrix
from .rng import stream
from .sv import check_cap, singular_values


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Equal-weight point masses on the half-line (``real``) or the plane (``complex``)."""

    points: np.ndarray
    kind: str = "complex"

    def __post_init__(self):
        if self.kind not in ("real", "complex"):
            raise InvalidParameter("kind must be 'real' or 'complex'")
        dtype = np.float64 if self.kind == "real" else np.complex128
        pts = np.ascontiguousarray(self.points, dtype=dtype).ravel()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    def cdf(self, x) -> np.ndarray:
        if self.kind != "real":
            raise InvalidParameter("cdf needs a real measure")
        return np.searchsorted(np.sort(self.points), np.asarray(x), side="right") / self.size

    def integrate(self, f) -> float:
        return float(np.mean(f(self.points)))

    def to_csv(self) -> str:
        w = 1.0 / self.size
        if self.kind == "real":
            lines = ["value,weight"] + [f"{p!r},{w!r}" for p in self.points.tolist()]
        else:
            lines = ["re,im,weight"] + [f"{p.real!r},{p.imag!r},{w!r}" for p in self.points.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "EmpiricalMeasure":
        rows = [r for r in text.splitlines() if r and not r.startswith("#")]
        header = rows[0].split(",")
        data = np.loadtxt(io.StringIO("\n".join(rows[1:])), delimiter=",", ndmin=2)
        if header[:2] == ["re", "im"]:
            return cls(data[:, 0] + 1j * data[:, 1], "complex")
        return cls(data[:, 0], "real")


def pooled(measures: Sequence[EmpiricalMeasure]) -> EmpiricalMeasure:
    """Average of equal-size measures (pooling their atoms)."""
    kinds = {m.kind for m in measures}
    if len(kinds) != 1:
        raise InvalidParameter("cannot pool measures of different kinds")
    return EmpiricalMeasure(np.concatenate([m.points for m in measures]), kinds.pop())


# spectra ----------------------------------------------------------------------------

def eigen_spectrum(m: BinaryMatrix, check_residual: bool = False) -> EmpiricalMeasure:
    """All eigenvalues; optionally verifies ||Mv - lambda v|| <= 1e-8 ||M||_op."""
    if m.rows != m.cols:
        raise InvalidParameter("eigenvalues need a square matrix")
    check_cap(m.rows)
    a = m.to_dense(np.float64)
    if check_residual:
        lam, vec = np.linalg.eig(a)
        res = np.linalg.norm(a @ vec - vec * lam, axis=0).max(initial=0.0)
        scale = float(singular_values(a)[0]) if m.nnz else 1.0
        if res > 1e-8 * max(scale, 1e-300):
            from .errors import ToleranceNotMet
            raise ToleranceNotMet(f"eigen residual {res:.3e}")
    else:
        lam = np.linalg.eigvals(a)
    return EmpiricalMeasure(lam, "complex")


def shifted_dense(m: BinaryMatrix, z: complex) -> np.ndarray:
    check_cap(*m.shape)
    a = m.to_dense(np.complex128)
    a -= z * np.eye(*m.shape)
    return a


def singular_measure(m: BinaryMatrix, z: complex) -> EmpiricalMeasure:
    """nu_z: the singular values of M - zI as a measure on the half-line."""
    return EmpiricalMeasure(singular_values(shifted_dense(m, z)), "real")


class LogPotential(NamedTuple):
    value: float
    determinant_form: float
    finite: bool


def log_potential(m: BinaryMatrix, z: complex, singular_tol: float = 1e-12) -> LogPotential:
    """-(1/n) sum log sigma_j(M - zI), with -(1/n) log|det(M - zI)| alongside."""
    if m.rows != m.cols:
        raise InvalidParameter("log-potential needs a square matrix")
    a = shifted_dense(m, z)
    s = singular_values(a)
    if s[-1] <= singular_tol * max(1.0, s[0]):
        return LogPotential(math.inf, math.inf, False)
    _, logdet = np.linalg.slogdet(a)
    n = m.rows
    return LogPotential(float(-np.log(s).sum() / n), float(-logdet / n), True)


def eigen_log_potential(eigs, z: complex, backend=None) -> float:
    """-(1/n) sum log|lambda_i - z|."""
    return float(-kernels.mean_log_distance(eigs, [z], backend)[0])


# trace moments ----------------------------------------------------------------------

def trace_moment(m: BinaryMatrix, signs: Sequence[int], block: int = 256) -> complex:
    """(1/n) Tr prod_i M^(s_i), with M^(1) = M and M^(-1) = M^dagger.

    The product is applied to blocks of identity columns through sparse
    products, so powers are never formed.
    """
    if m.rows != m.cols:
        raise InvalidParameter("trace moments need a square matrix")
    signs = list(signs)
    if len(signs) > 20 or any(s not in (1, -1) for s in signs):
        raise InvalidParameter("need at most 20 signs from {1, -1}")
    n = m.rows
    fwd = m.csr
    adj = fwd.T.tocsr()
    ops = [fwd if s == 1 else adj for s in signs]
    total = 0.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        y = np.zeros((n, stop - start))
        y[np.arange(start, stop), np.arange(stop - start)] = 1.0
        for op in reversed(ops):
            y = op @ y
        total += float(np.trace(y[start:stop]))
    return complex(total / n)


def gram_power_traces(m: BinaryMatrix, z: complex, r_max: int) -> np.ndarray:
    """(1/n) Tr((A^dag A)^r) = (1/n) sum sigma_i(A)^{2r} for A = M - zI, r = 1..r_max.

    Uses sparse products of the Gram matrix G: Tr G^r is read off G^a and
    G^b with a + b = r, so at most G^{ceil(r_max/2)} is formed.
    """
    if r_max < 1:
        return np.empty(0)
    n = m.rows
    a = (m.csr - z * sparse.identity(n, format="csr")).tocsr()
    g = (a.conj().T @ a).tocsr()
    half = (r_max + 1) // 2
    powers = [sparse.identity(n, dtype=np.complex128, format="csr"), g]
    for _ in range(2, half + 1):
        powers.append((powers[-1] @ g).tocsr())
    out = np.empty(r_max)
    for r in range(1, r_max + 1):
        lo = r // 2
        hi = r - lo
        # Tr(G^lo G^hi) = sum of elementwise product of G^lo and (G^hi)^T
        out[r - 1] = float(np.real(powers[lo].multiply(powers[hi].T).sum())) / n
    return out


class RotationalReport(NamedTuple):
    r: np.ndarray
    mean_difference: np.ndarray
    stderr: np.ndarray
    band: float
    within: np.ndarray


def rotational_differences(m: BinaryMatrix, z: complex, r_max: int) -> np.ndarray:
    """(1/n) sum sigma_i(M - zI)^{2r} - (1/n) sum sigma_i(M - |z|I)^{2r} for r = 1..r_max."""
    return gram_power_traces(m, z, r_max) - gram_power_traces(m, abs(z), r_max)


def rotational_probe(matrices, z: complex, r_max: int, band: float) -> RotationalReport:
    """Mean moment differences over ``matrices`` against ``band`` + 3 standard errors."""
    diffs = np.array([rotational_differences(mm, z, r_max) for mm in matrices])
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(len(diffs)) if len(diffs) > 1 else np.zeros(r_max)
    return RotationalReport(np.arange(1, r_max + 1), mean, se, band, np.abs(mean) <= band + 3 * se)


def singular_moment_fit(values, d: float, z: complex, k_max: int = 10) -> dict:
    """Smallest c1 with (1/n) sum sigma^k <= (c1 d k / log(k+1) + 4|z|)^k for k <= k_max."""
    s = np.asarray(values, dtype=np.float64)
    need = []
    for k in range(1, k_max + 1):
        root = float(np.mean(s ** k)) ** (1.0 / k)
        need.append(max(root - 4 * abs(z), 0.0) * math.log(k + 1) / (d * k))
    return {"c1": max(need), "per_k": need}


# sublevel sets ------------------------------------------------------------------------

class AreaEstimate(NamedTuple):
    tau: float
    log_area: float
    rel_stderr: float
    hits: int
    samples: int

    @property
    def area(self) -> float:
        return math.exp(self.log_area) if self.log_area > -math.inf else 0.0


def _cluster(eigs: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Group eigenvalues closer than ``tol``: (representatives, multiplicities)."""
    order = np.lexsort((eigs.imag, eigs.real))
    reps, mult = [], []
    for lam in eigs[order]:
        if reps and abs(lam - reps[-1]) <= tol:
            mult[-1] += 1
        else:
            reps.append(lam)
            mult.append(1)
    return np.array(reps), np.array(mult)


def _log_distances(centers, mult, base: int, log_r: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """log|c_j - z| for z = c_base + exp(log_r) e^{i phase}; one row per sample."""
    offs = centers - centers[base]
    step = np.where(log_r > -700, np.exp(np.maximum(log_r, -700)), 0.0) * np.exp(1j * phase)
    with np.errstate(divide="ignore"):
        out = np.log(np.abs(offs[None, :] - step[:, None]))
    out[:, base] = log_r
    return out


def sublevel_area(eigs, tau: float, radius: float, samples: int = 200_000, seed: int = 0,
                  uniform_share: float = 0.5, depth: float = 30.0,
                  cluster_tol: float = 1e-10) -> AreaEstimate:
    """Lebesgue measure of {|z| <= radius : prod |lambda_i - z| <= exp(-tau n)}.

    Importance sampling from a mixture of the uniform disk and, around each
    (clustered) eigenvalue, a log-uniform radius down to ``depth`` nats below
    the predicted local sublevel radius.  Everything is carried in log space,
    so sets far below double-precision resolution are measured exactly.
    """
    lam = np.asarray(eigs.points if isinstance(eigs, EmpiricalMeasure) else eigs, dtype=np.complex128)
    n = lam.size
    centers, mult = _cluster(lam, cluster_tol)
    k = centers.size
    with np.errstate(divide="ignore"):
        pair = np.log(np.abs(centers[:, None] - centers[None, :]))
    np.fill_diagonal(pair, 0.0)
    # predicted log-radius of the sublevel set around each cluster
    rest = (pair * mult[None, :]).sum(axis=1)
    log_star = (-tau * n - rest) / mult
    log_hi = math.log(2 * radius)
    log_lo = np.minimum(log_star - depth, log_hi - 1.0)
    span = log_hi - log_lo
    rng = stream(seed, "sublevel", int(round(tau * 1e6)))
    n_unif = int(round(samples * uniform_share))
    n_local = samples - n_unif
    log_target = -tau * n

    # uniform component
    rad = radius * np.sqrt(rng.random(n_unif))
    z_u = rad * np.exp(2j * np.pi * rng.random(n_unif))
    # local components: choose a cluster uniformly, then a log-uniform radius
    which = rng.integers(k, size=n_local)
    log_r = log_lo[which] + span[which] * rng.random(n_local)
    phase = 2 * np.pi * rng.random(n_local)

    log_unif_density = math.log(uniform_share) - math.log(math.pi * radius ** 2)

    def log_mix_density(logdist: np.ndarray, inside: np.ndarray) -> np.ndarray:
        # q_j(z) = 1 / (2 pi r^2 span_j) for log r in [log_lo_j, log_hi]
        ok = (logdist >= log_lo[None, :]) & (logdist <= log_hi)
        comp = np.where(ok, -math.log(2 * math.pi) - 2 * logdist - np.log(span)[None, :], -np.inf)
        local = logsumexp(comp, axis=1) + math.log(1 - uniform_share) - math.log(k)
        unif = np.where(inside, log_unif_density, -np.inf)
        return np.logaddexp(local, unif)

    log_w = []
    # uniform draws: distances to all clusters in ordinary precision
    for s in range(0, n_unif, 4096):
        zz = z_u[s:s + 4096]
        with np.errstate(divide="ignore"):
            ld = np.log(np.abs(centers[None, :] - zz[:, None]))
        pot = ld @ mult
        hit = pot <= log_target
        if hit.any():
            log_w.append(-log_mix_density(ld[hit], np.ones(hit.sum(), bool)))
    for j in np.unique(which):
        sel = np.nonzero(which == j)[0]
        for s in range(0, sel.size, 4096):
            idx = sel[s:s + 4096]
            ld = _log_distances(centers, mult, int(j), log_r[idx], phase[idx])
            zz = centers[j] + np.exp(np.minimum(log_r[idx], 50)) * np.exp(1j * phase[idx])
            inside = np.abs(zz) <= radius
            pot = ld @ mult
            hit = (pot <= log_target) & inside
            if hit.any():
                log_w.append(-log_mix_density(ld[hit], inside[hit]))
    if not log_w:
        return AreaEstimate(tau, -math.inf, math.inf, 0, samples)
    lw = np.concatenate(log_w)
    log_sum = float(logsumexp(lw))
    log_area = log_sum - math.log(samples)
    # relative standard error of the mean weight
    w_rel = np.exp(lw - lw.max())
    m1 = w_rel.sum() / samples
    m2 = (w_rel ** 2).sum() / samples
    rel = math.sqrt(max(m2 - m1 ** 2, 0.0) / samples) / m1
    return AreaEstimate(tau, log_area, rel, int(lw.size), samples)


def sublevel_area_grid(eigs, tau: float, radius: float, grid: int = 512) -> float:
    """Midpoint-grid area of the same set (resolves only sets wider than a cell)."""
    if grid < 64:
        raise InvalidParameter("grid must be at least 64")
    lam = np.asarray(eigs.points if isinstance(eigs, EmpiricalMeasure) else eigs, dtype=np.complex128)
    h = 2 * radius / grid
    xs = -radius + h * (np.arange(grid) + 0.5)
    zz = (xs[None, :] + 1j * xs[:, None]).ravel()
    zz = zz[np.abs(zz) <= radius]
    pot = kernels.mean_log_distance(lam, zz)
    return float(np.count_nonzero(pot <= -tau)) * h * h


class AreaFit(NamedTuple):
    estimates: list
    slope: float
    decreasing: bool


def sublevel_decay(eigs, taus: Sequence[float], radius: float, samples: int = 200_000,
                   seed: int = 0) -> AreaFit:
    """Areas at each tau with the least-squares slope of log-area against tau."""
    ests = [sublevel_area(eigs, t, radius, samples, seed) for t in taus]
    la = np.array([e.log_area for e in ests])
    if np.isfinite(la).sum() >= 2:
        ok = np.isfinite(la)
        slope = float(np.polyfit(np.asarray(taus)[ok], la[ok], 1)[0])
    else:
        slope = -math.inf
    return AreaFit(ests, slope, bool(np.all(np.diff(la) < 0)))


# measure distances --------------------------------------------------------------------

def kolmogorov_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    grid = np.union1d(a.points, b.points)
    return float(np.abs(a.cdf(grid) - b.cdf(grid)).max(initial=0.0))


def test_functions(radius: float = 4.0, side: int = 8):
    """side^2 bounded Lipschitz functions: Gaussian in Re times tent in Im on a grid."""
    centers = np.linspace(-radius, radius, side)
    width = 2 * radius / (side - 1)

    def evaluate(points: np.ndarray) -> np.ndarray:
        x = points.real[None, :]
        y = points.imag[None, :]
        gx = np.exp(-0.5 * ((x - centers[:, None]) / width) ** 2)          # side x N
        ty = np.clip(1 - np.abs(y - centers[:, None]) / width, 0.0, None)  # side x N
        return (gx[:, None, :] * ty[None, :, :]).reshape(side * side, -1)

    return evaluate


def measure_distance(a: EmpiricalMeasure, b: EmpiricalMeasure, radius: float = 4.0) -> float:
    """Kolmogorov distance for real measures; test-function sup distance in the plane."""
    if a.kind != b.kind:
        raise InvalidParameter("measures live in different spaces")
    if a.kind == "real":
        return kolmogorov_distance(a, b)
    f = test_functions(radius)
    return float(np.abs(f(a.points).mean(axis=1) - f(b.points).mean(axis=1)).max())


# atoms and tails ----------------------------------------------------------------------

class NonatomicSample(NamedTuple):
    event: bool
    sigma: float
    tail_integral: float


def nonatomic_probe(m: BinaryMatrix, z: complex, gamma: float, tau: float,
                    tail_threshold: float | None = None) -> NonatomicSample:
    """Event sigma_{ceil((1-gamma)m)}(M - zI) <= tau and the log tail integral of nu_z."""
    if not 0 < gamma < 0.5 or not 0 < tau < 0.5:
        raise InvalidParameter("need gamma, tau in (0, 1/2)")
    s = singular_values(shifted_dense(m, z))
    n = m.cols
    idx = math.ceil((1 - gamma) * n)
    sig = float(s[idx - 1]) if idx <= s.size else 0.0
    t = math.log(1 / tau) if tail_threshold is None else tail_threshold
    with np.errstate(divide="ignore"):
        ls = np.abs(np.log(np.concatenate([s, np.zeros(n - s.size)])))
    tail = float(ls[ls >= t].sum() / n)
    return NonatomicSample(sig <= tau, sig, tail)


# plotting --------------------------------------------------------------------------------

def eigen_svg(points, size: int = 480, unit_circle: bool = True, header: str = "") -> str:
    """Static SVG scatter of complex points."""
    pts = np.asarray(points, dtype=np.complex128)
    extent = max(1.1, float(np.abs(pts).max(initial=1.0)) * 1.1)
    scale = size / (2 * extent)
    cx = cy = size / 2

    def xy(p):
        return cx + p.real * scale, cy - p.imag * scale

    lines = ['<?xml version="1.0" encoding="UTF-8"?>']
    if header:
        lines.append(f"<!-- {header} -->")
    lines.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
                 f'viewBox="0 0 {size} {size}">')
    lines.append(f'<rect width="{size}" height="{size}" fill="white"/>')
    lines.append(f'<line x1="0" y1="{cy}" x2="{size}" y2="{cy}" stroke="#bbb" stroke-width="0.5"/>')
    lines.append(f'<line x1="{cx}" y1="0" x2="{cx}" y2="{size}" stroke="#bbb" stroke-width="0.5"/>')
    if unit_circle:
        lines.append(f'<circle cx="{cx}" cy="{cy}" r="{scale:.4f}" fill="none" stroke="#888" '
                     'stroke-dasharray="4 3" stroke-width="0.8"/>')
    for p in pts:
        x, y = xy(p)
        lines.append(f'<circle class="eig" cx="{x:.3f}" cy="{y:.3f}" r="1.5" fill="#1f4e9a"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
