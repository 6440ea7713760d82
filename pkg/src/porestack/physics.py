"""Quasi-static reactive dissolution proxy on a unit-spaced 2-D grid.

Each recorded step solves, on the current porosity field, a steady
pressure equation, derives a Darcy velocity, solves a steady
advection-diffusion-reaction equation for concentration, and then
advances porosity with an explicit dissolution increment.  Flow enters
at the left column and leaves at the right; top and bottom walls are
closed.

Discretization notes, shared by the two linear solves:

* Pressure: div(k grad p) = 0 with cell conductivity k = eps^a + k_min
  and harmonic-mean face conductivities.  Dirichlet values pin the inlet
  and outlet columns; wall faces carry no flux.  Solved by red-black SOR
  with the classical optimal relaxation factor for a Poisson-like
  stencil, to a relative infinity-norm residual below `tol`.
* Concentration: advection in non-conservative form u . grad(C) with
  cell-centered upwind differences, diffusion with face coefficient
  D * (eps_l + eps_r) / 2, and a linear sink rate*C restricted to
  reaction-active cells (the same activity rule as the combined filter
  channel).  The non-conservative upwind form keeps the stencil an
  M-matrix even though the interpolated velocity field is not exactly
  divergence-free at the discrete level, so concentrations stay inside
  [0, c_in].  Because the active set depends on C itself, the linear
  system is re-solved (sparse direct) under a Picard iteration on the
  mask; cells sitting exactly at the activity threshold may land on
  either side, in which case the mask is frozen after a bounded number
  of outer iterations and the returned field solves that frozen system
  to machine precision.  Where an upwind neighbor would fall outside
  the domain the advective term is dropped, which doubles as a
  zero-gradient outlet condition.

All solver arithmetic is float64; recorded states are cast to float32 at
the end.  Every routine is deterministic for a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .data import Ensemble, Simulation, PHYSICAL_CHANNELS
from .errors import DataError, SolverError
from .features import FILTER_C_MIN, FILTER_EPS_MAX, FILTER_EPS_MIN


def conductivity(eps: np.ndarray, k_min: float = 1e-4,
                 exponent: float = 3.0) -> np.ndarray:
    """Cell conductivity: a cubic-law style power of porosity plus a floor."""
    return np.power(eps, exponent) + k_min


def face_conductivity(eps: np.ndarray, k_min: float = 1e-4,
                      exponent: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic-mean conductivities on vertical (kx) and horizontal (ky) faces."""
    k = conductivity(np.asarray(eps, dtype=np.float64), k_min, exponent)
    kx = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
    ky = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
    return kx, ky


def _neighbor_sum(p: np.ndarray, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    num = np.zeros_like(p)
    num[:, 1:] += kx * p[:, :-1]
    num[:, :-1] += kx * p[:, 1:]
    num[1:, :] += ky * p[:-1, :]
    num[:-1, :] += ky * p[1:, :]
    return num


def _default_omega(shape: tuple[int, int]) -> float:
    return 2.0 / (1.0 + np.sin(np.pi / max(shape)))


def solve_pressure(eps: np.ndarray, p_in: float = 1.0, p_out: float = 0.0,
                   k_min: float = 1e-4, exponent: float = 3.0,
                   tol: float = 1e-8, max_sweeps: int = 200_000,
                   omega: float | None = None) -> np.ndarray:
    """Solve the steady pressure field for given porosity.

    Returns a float64 (H, W) array with p[:, 0] == p_in and
    p[:, -1] == p_out.  Raises SolverError if the sweep cap is reached
    before the scaled residual drops below `tol`.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 2 or min(eps.shape) < 3:
        raise DataError(f"pressure solve needs a 2-D grid of at least 3x3, got {eps.shape}")
    h, w = eps.shape
    kx, ky = face_conductivity(eps, k_min, exponent)
    diag = _neighbor_sum(np.ones_like(eps), kx, ky)

    cols = np.arange(w)[None, :]
    rows = np.arange(h)[:, None]
    free = np.broadcast_to((cols > 0) & (cols < w - 1), eps.shape)
    red = (rows + cols) % 2 == 0
    masks = (free & red, free & ~red)

    p = np.broadcast_to(
        p_in + (p_out - p_in) * cols / (w - 1), eps.shape
    ).astype(np.float64).copy()
    p[:, 0], p[:, -1] = p_in, p_out

    if omega is None:
        omega = _default_omega(eps.shape)
    scale = float(diag.max()) * max(abs(p_in), abs(p_out), abs(p_in - p_out))
    if scale <= 0.0:
        scale = float(diag.max())

    for sweep in range(max_sweeps):
        for mask in masks:
            num = _neighbor_sum(p, kx, ky)
            p[mask] += omega * (num[mask] / diag[mask] - p[mask])
        if sweep % 8 == 0 or sweep == max_sweeps - 1:
            resid = _neighbor_sum(p, kx, ky) - diag * p
            if np.abs(resid[free]).max() <= tol * scale:
                return p
    raise SolverError(
        f"pressure solve did not reach tol {tol} within {max_sweeps} sweeps"
    )


def face_fluxes(p: np.ndarray, eps: np.ndarray, k_min: float = 1e-4,
                exponent: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Conservative fluxes on faces: fx (H, W-1) positive rightward,
    fy (H-1, W) positive downward."""
    kx, ky = face_conductivity(eps, k_min, exponent)
    fx = kx * (p[:, :-1] - p[:, 1:])
    fy = ky * (p[:-1, :] - p[1:, :])
    return fx, fy


def velocity_from_pressure(p: np.ndarray, eps: np.ndarray, k_min: float = 1e-4,
                           exponent: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centered Darcy velocity u = -k grad(p), central differences inside,
    one-sided at the boundary columns/rows."""
    p = np.asarray(p, dtype=np.float64)
    k = conductivity(np.asarray(eps, dtype=np.float64), k_min, exponent)
    dpdx = np.empty_like(p)
    dpdx[:, 1:-1] = 0.5 * (p[:, 2:] - p[:, :-2])
    dpdx[:, 0] = p[:, 1] - p[:, 0]
    dpdx[:, -1] = p[:, -1] - p[:, -2]
    dpdy = np.empty_like(p)
    dpdy[1:-1, :] = 0.5 * (p[2:, :] - p[:-2, :])
    dpdy[0, :] = p[1, :] - p[0, :]
    dpdy[-1, :] = p[-1, :] - p[-2, :]
    return -k * dpdx, -k * dpdy


def through_flux(p: np.ndarray, eps: np.ndarray, k_min: float = 1e-4,
                 exponent: float = 3.0) -> float:
    """Total volumetric flux through the inlet face column."""
    fx, _ = face_fluxes(p, eps, k_min, exponent)
    return float(fx[:, 0].sum())


def reaction_active(c: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Boolean activity mask matching the combined filter thresholds."""
    return (c >= FILTER_C_MIN) & (eps >= FILTER_EPS_MIN) & (eps <= FILTER_EPS_MAX)


def steady_concentration(eps: np.ndarray, ux: np.ndarray, uy: np.ndarray,
                         diffusion: float = 1.0, rate: float = 0.0,
                         c_in: float = 1.0, c_out: float | None = None,
                         tol: float = 1e-7, max_picard: int = 50) -> np.ndarray:
    """Solve the steady transport balance for concentration.

    The inlet column is pinned to `c_in`.  With `c_out` given, the outlet
    column is pinned too (useful for analytic checks); otherwise solute
    leaves by advection only.  Returns a float64 (H, W) array bounded by
    [0, max(c_in, c_out or 0)] through the maximum principle of the
    upwind stencil.  Raises SolverError if the final residual exceeds
    `tol` relative to the stencil scale.
    """
    eps = np.asarray(eps, dtype=np.float64)
    ux = np.asarray(ux, dtype=np.float64)
    uy = np.asarray(uy, dtype=np.float64)
    if eps.shape != ux.shape or eps.shape != uy.shape:
        raise DataError("eps, ux, uy must share one grid shape")
    if diffusion <= 0.0:
        raise DataError(f"diffusion must be positive, got {diffusion}")
    if rate < 0.0:
        raise DataError(f"reaction rate must be non-negative, got {rate}")
    h, w = eps.shape

    dfx = diffusion * 0.5 * (eps[:, :-1] + eps[:, 1:])
    dfy = diffusion * 0.5 * (eps[:-1, :] + eps[1:, :])
    # Upwind advective weights per cell: positive ux pulls from the left
    # neighbor, negative from the right; positive uy pulls from the row
    # above.  Where the upwind neighbor would fall outside the grid the
    # weight is dropped (zero-gradient there).
    from_left = np.maximum(ux, 0.0)
    from_left[:, 0] = 0.0
    from_right = np.maximum(-ux, 0.0)
    from_right[:, -1] = 0.0
    from_up = np.maximum(uy, 0.0)
    from_up[0, :] = 0.0
    from_down = np.maximum(-uy, 0.0)
    from_down[-1, :] = 0.0

    # Off-diagonal weights (diffusive + advective) and the matching diagonal.
    wx_from_left = from_left.copy()
    wx_from_left[:, 1:] += dfx      # weight of C[i, j-1] in cell (i, j)
    wx_from_right = from_right.copy()
    wx_from_right[:, :-1] += dfx    # weight of C[i, j+1] in cell (i, j)
    wy_from_up = from_up.copy()
    wy_from_up[1:, :] += dfy
    wy_from_down = from_down.copy()
    wy_from_down[:-1, :] += dfy
    diag = wx_from_left + wx_from_right + wy_from_up + wy_from_down

    cols = np.arange(w)[None, :]
    fixed = np.broadcast_to(
        (cols == 0) | ((cols == w - 1) if c_out is not None else False), eps.shape
    )
    ids = np.arange(h * w).reshape(h, w)

    rhs = np.zeros(h * w)
    rhs[ids[:, 0]] = c_in
    if c_out is not None:
        rhs[ids[:, -1]] = c_out

    # Off-diagonal COO entries, receiving cell -> neighbor, free rows only.
    rows_ij, cols_ij, vals_ij = [], [], []
    for weight, rec, nb in (
        (wx_from_left[:, 1:], ids[:, 1:], ids[:, :-1]),
        (wx_from_right[:, :-1], ids[:, :-1], ids[:, 1:]),
        (wy_from_up[1:, :], ids[1:, :], ids[:-1, :]),
        (wy_from_down[:-1, :], ids[:-1, :], ids[1:, :]),
    ):
        keep = ~fixed.ravel()[rec.ravel()]
        rows_ij.append(rec.ravel()[keep])
        cols_ij.append(nb.ravel()[keep])
        vals_ij.append(-weight.ravel()[keep])
    off_rows = np.concatenate(rows_ij)
    off_cols = np.concatenate(cols_ij)
    off_vals = np.concatenate(vals_ij)
    all_ids = np.arange(h * w)

    band = (eps >= FILTER_EPS_MIN) & (eps <= FILTER_EPS_MAX)

    def solve_with(active: np.ndarray) -> np.ndarray:
        a = diag + rate * active
        diag_vals = np.where(fixed.ravel(), 1.0, a.ravel())
        matrix = sparse.csr_matrix(
            (np.concatenate([diag_vals, off_vals]),
             (np.concatenate([all_ids, off_rows]),
              np.concatenate([all_ids, off_cols]))),
            shape=(h * w, h * w),
        )
        return spsolve(matrix, rhs).reshape(h, w)

    # Picard iteration on the activity mask; starts from the maximal mask.
    active = band.copy() if rate > 0.0 else np.zeros_like(band)
    c = solve_with(active)
    if rate > 0.0:
        for _ in range(max_picard):
            new_active = band & (c >= FILTER_C_MIN)
            if np.array_equal(new_active, active):
                break
            active = new_active
            c = solve_with(active)

    a = diag + rate * active
    resid = _concentration_residual(c, wx_from_left, wx_from_right,
                                    wy_from_up, wy_from_down, a)
    c_scale = max(abs(c_in), abs(c_out) if c_out is not None else 0.0, 1e-300)
    if np.abs(resid[~fixed]).max() > tol * float(a.max()) * c_scale:
        raise SolverError(f"concentration residual exceeds tol {tol}")
    return c


def _concentration_residual(c, wx_from_left, wx_from_right, wy_from_up,
                            wy_from_down, a):
    num = np.zeros_like(c)
    num[:, 1:] += wx_from_left[:, 1:] * c[:, :-1]
    num[:, :-1] += wx_from_right[:, :-1] * c[:, 1:]
    num[1:, :] += wy_from_up[1:, :] * c[:-1, :]
    num[:-1, :] += wy_from_down[:-1, :] * c[1:, :]
    return num - a * c


def dissolution_mask(eps: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Cells whose porosity may grow: reaction-active ones plus cells whose
    3x3-smoothed porosity falls in the reactive band (the interface rim)."""
    smoothed = ndimage.uniform_filter(np.asarray(eps, dtype=np.float64),
                                      size=3, mode="nearest")
    band = (smoothed > FILTER_EPS_MIN) & (smoothed < FILTER_EPS_MAX)
    return reaction_active(np.asarray(c), np.asarray(eps)) | band


def step_eps(eps: np.ndarray, c: np.ndarray, rate: float, dt: float) -> np.ndarray:
    """Advance porosity by one explicit dissolution increment.

    eps' = min(1, eps + dt * rate * max(C, 0)) on the dissolution mask;
    unchanged elsewhere.  Monotone non-decreasing everywhere by
    construction.
    """
    if rate < 0.0 or dt <= 0.0:
        raise DataError("rate must be non-negative and dt positive")
    eps = np.asarray(eps, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if eps.shape != c.shape:
        raise DataError(f"eps and C disagree in shape: {eps.shape} vs {c.shape}")
    mask = dissolution_mask(eps, c)
    grown = np.minimum(1.0, eps + dt * rate * np.maximum(c, 0.0))
    return np.where(mask, grown, eps)


def percolates(eps: np.ndarray, threshold: float = 0.5) -> bool:
    """True when one 4-connected pore component touches both the inlet and
    outlet columns."""
    labels, count = ndimage.label(np.asarray(eps) > threshold)
    if count == 0:
        return False
    left = set(np.unique(labels[:, 0])) - {0}
    right = set(np.unique(labels[:, -1])) - {0}
    return bool(left & right)


def generate_geometry(seed: int, height: int, width: int, grain_fraction: float,
                      smoothing_sigma: float = 3.0, eps_grain: float = 1e-3,
                      max_attempts: int = 100) -> np.ndarray:
    """Sample a random binary-ish porosity field that percolates.

    Smoothed Gaussian noise is thresholded at the requested grain
    quantile; cells below become grains at `eps_grain`, the rest open
    pores at 1.  Re-samples with a fresh sub-seed until the pore phase
    connects inlet to outlet, up to `max_attempts`.
    """
    if not 0.0 <= grain_fraction < 1.0:
        raise DataError(f"grain_fraction must be in [0, 1), got {grain_fraction}")
    if not 0.0 < eps_grain < 1.0:
        raise DataError(f"eps_grain must be in (0, 1), got {eps_grain}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        noise = rng.standard_normal((height, width))
        smooth = ndimage.gaussian_filter(noise, smoothing_sigma, mode="reflect")
        thr = np.quantile(smooth, grain_fraction)
        eps = np.where(smooth < thr, eps_grain, 1.0)
        if percolates(eps):
            return eps
    raise SolverError(
        f"no percolating geometry in {max_attempts} attempts "
        f"(seed {seed}, grain_fraction {grain_fraction})"
    )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic dissolution generator.

    The velocity field is rescaled each step so the superficial inlet
    velocity matches `peclet * diffusion / width`, and the sink rate is
    `kinetic * reaction_rate * diffusion / width**2`; both therefore
    express dimensionless intensities independent of grid size.
    """

    seed: int = 0
    height: int = 32
    width: int = 32
    steps: int = 20
    grain_fraction: float = 0.45
    smoothing_sigma: float = 3.0
    eps_grain: float = 0.05
    k_min: float = 1e-4
    conductivity_exponent: float = 3.0
    diffusion: float = 1.0
    peclet: float = 20.0
    kinetic: float = 500.0
    reaction_rate: float = 1.0
    dissolution_dt: float = 2.0
    pressure_tol: float = 1e-8
    concentration_tol: float = 1e-7
    max_sweeps: int = 200_000

    def __post_init__(self) -> None:
        if self.height < 4 or self.width < 4:
            raise DataError("grid must be at least 4x4")
        if self.steps < 1:
            raise DataError("steps must be positive")
        if not 0.0 <= self.grain_fraction < 1.0:
            raise DataError("grain_fraction must be in [0, 1)")
        for name in ("smoothing_sigma", "k_min", "diffusion", "peclet",
                     "kinetic", "reaction_rate", "dissolution_dt"):
            if getattr(self, name) <= 0.0:
                raise DataError(f"{name} must be positive")
        if not 0.0 < self.eps_grain <= 0.5:
            raise DataError("eps_grain must be in (0, 0.5]")

    @property
    def sink_rate(self) -> float:
        return self.kinetic * self.reaction_rate * self.diffusion / self.width ** 2

    @property
    def target_inlet_velocity(self) -> float:
        return self.peclet * self.diffusion / self.width


def generate_simulation(cfg: SynthConfig, sim_id: str | None = None) -> Simulation:
    """Run the quasi-static loop and record (C, eps, Ux, Uy) per step."""
    eps = generate_geometry(cfg.seed, cfg.height, cfg.width, cfg.grain_fraction,
                            cfg.smoothing_sigma, cfg.eps_grain)
    states = []
    for t in range(cfg.steps):
        p = solve_pressure(eps, k_min=cfg.k_min, exponent=cfg.conductivity_exponent,
                           tol=cfg.pressure_tol, max_sweeps=cfg.max_sweeps)
        ux, uy = velocity_from_pressure(p, eps, cfg.k_min, cfg.conductivity_exponent)
        q = through_flux(p, eps, cfg.k_min, cfg.conductivity_exponent)
        superficial = q / cfg.height
        if superficial <= 0.0:
            raise SolverError(f"no through-flow at step {t} (seed {cfg.seed})")
        scale = cfg.target_inlet_velocity / superficial
        ux, uy = ux * scale, uy * scale
        c = steady_concentration(eps, ux, uy, diffusion=cfg.diffusion,
                                 rate=cfg.sink_rate, tol=cfg.concentration_tol)
        states.append(np.stack([c, eps, ux, uy]).astype(np.float32))
        if t < cfg.steps - 1:
            eps = step_eps(eps, c, cfg.sink_rate, cfg.dissolution_dt)
    sim_id = sim_id or f"synth-{cfg.seed:04d}"
    return Simulation(sim_id, PHYSICAL_CHANNELS, states)


def generate_ensemble(cfg: SynthConfig, count: int) -> Ensemble:
    """Generate `count` members with consecutive seeds starting at cfg.seed."""
    if count < 1:
        raise DataError("ensemble needs at least one member")
    from dataclasses import replace as _replace
    sims = [generate_simulation(_replace(cfg, seed=cfg.seed + k)) for k in range(count)]
    return Ensemble(sims)
