"""End-to-end few-shot reconstruction driver.

Orchestrates the alternating minimization: initialize the signal estimate
from the raw counts and the volume from a sparse least-squares fit, then
per outer iteration update (in this order) the surface element, the block
dictionary triplet, the shared signal coefficients, the per-bin signal,
and finally the volume. All adaptive weights are resolved once, recorded,
and reported in the run manifest.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DimensionMismatch
from .forward import ForwardOperator
from .geometry import (
    AlbedoVolume,
    PhotonHistogram,
    SurfaceG,
    TransientSignal,
    VoxelGrid,
    surface_to_volume,
)
from .patches import (
    BlockConfig,
    DictionaryTriplet,
    PatchConfig,
    SignalDictionary,
    block_match,
    extract_patches,
    aggregate_patches,
    gather_block_stacks,
    triplet_residual,
    update_S,
    update_triplet,
)
from .photon import nll
from .signal_update import adaptive_lambda, update_tau
from .solvers import LinearMap, cg_solve, l1_ls_bregman, soft_threshold
from .surface_fit import surfaciate

__all__ = [
    "SscrConfig",
    "SscrState",
    "STAGE_SEQUENCE",
    "init_tau",
    "init_u",
    "update_u",
    "sscr_reconstruct",
    "objective",
]

# one outer iteration visits the five updates in this fixed order
STAGE_SEQUENCE = ("surface", "triplet", "signal_coeffs", "signal_update", "volume_update")


@dataclass(frozen=True)
class SscrConfig:
    """Tuning knobs with the shipped defaults.

    The quadratic weights themselves are not listed here: they are
    resolved adaptively at run time (see the manifest); only their
    balance multipliers are configurable.
    """

    outer_iters: int = 5
    k_sparse: float = 10.0
    bregman_iters: int = 10
    cg_max_iter: int = 20
    cg_rel_tol: float = 0.005
    keep_frac_signal: float = 0.02
    keep_frac_blocks: float = 0.05
    time_patch: int = 64
    block: BlockConfig = field(default_factory=BlockConfig)
    triplet_sweeps: int = 1
    balance_ut: float = 1.0
    balance_u: float = 1.0
    balance_g: float = 1.0

    def __post_init__(self):
        numeric = {k: v for k, v in asdict(self).items() if not isinstance(v, dict)}
        if any(v <= 0 for v in numeric.values()):
            raise ValueError("all configuration values must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class _BlockPlan:
    """Frozen block-matching layout used within one outer iteration."""

    matches: np.ndarray
    stacks: np.ndarray
    block: int
    coverage: np.ndarray  # flat voxel appearance counts

    def scatter(self, targets, dims):
        """Sum target stack columns back into voxel space (flat)."""
        out = np.zeros(int(np.prod(dims)))
        vol = out.reshape(dims)
        b = self.block
        for r in range(self.matches.shape[0]):
            for c in range(self.matches.shape[1]):
                i, j, k = self.matches[r, c]
                vol[i : i + b, j : j + b, k : k + b] += targets[r, :, c].reshape(b, b, b)
        return out


def _make_block_plan(u_values, cfg: BlockConfig):
    b = min(cfg.block, min(u_values.shape))
    limits = tuple(dim - b + 1 for dim in u_values.shape)
    worst = 1
    for ax in range(3):
        worst *= min(limits[ax], cfg.window + 1)
    neighbors = min(cfg.neighbors, worst)
    eff = BlockConfig(b, neighbors, cfg.window, min(cfg.stride, b))
    _, matches = block_match(u_values, eff)
    stacks = gather_block_stacks(u_values, matches, b)
    coverage = np.zeros(u_values.size)
    vol = coverage.reshape(u_values.shape)
    for r in range(matches.shape[0]):
        for c in range(matches.shape[1]):
            i, j, k = matches[r, c]
            vol[i : i + b, j : j + b, k : k + b] += 1.0
    return _BlockPlan(matches, stacks, b, coverage)


@dataclass
class SscrState:
    """Every optimization variable plus the run record."""

    tau: TransientSignal
    u: AlbedoVolume
    g: SurfaceG
    triplet: DictionaryTriplet
    coeffs: np.ndarray
    coeff_threshold: float
    patch_cfg: PatchConfig
    dictionary: SignalDictionary
    matches: np.ndarray | None
    params: dict
    trace: list = field(default_factory=list)
    stages: list = field(default_factory=list)


def init_tau(hist: PhotonHistogram) -> TransientSignal:
    """Closed-form count-rate estimate d / N per bin."""
    values = hist.counts / float(hist.pulses)
    if (hist.counts == hist.pulses).any():
        warnings.warn("some bin saturated (d == N); its rate estimate is 1.0",
                      stacklevel=2)
    return TransientSignal(hist.geometry, values)


def init_u(tau0: TransientSignal, op: ForwardOperator, cfg: SscrConfig):
    """Sparse initial volume from an L1-regularized least-squares fit.

    The sparsity weight is calibrated on the plain least-squares solution
    (CG from the back-projection, capped iterations): ``s_imp = k_sparse
    * ||tau0 - A u_ls||^2 / ||u_ls||_1``, and the split penalty is
    ``mu_s = (||u_ls||_0 / (2 ||u_ls||_1)) * s_imp``. Returns the volume
    and the resolved parameter record.
    """
    a = op.as_linear_map()
    tau_vec = tau0.values.reshape(-1)
    params = {"s_imp": 0.0, "mu_s": 1.0, "ls_residual_sq": 0.0, "ls_l1": 0.0, "ls_l0": 0}
    if not tau_vec.any():
        return AlbedoVolume.zeros(op.grid), params
    atb = a.apply_adjoint(tau_vec)
    u_ls, _ = cg_solve(a.gram(), atb, x0=atb, max_iter=cfg.cg_max_iter,
                       rel_tol=cfg.cg_rel_tol)
    resid_sq = float(((a.apply(u_ls) - tau_vec) ** 2).sum())
    l1 = float(np.abs(u_ls).sum())
    if l1 == 0.0:
        return AlbedoVolume.zeros(op.grid), params
    l0 = int((np.abs(u_ls) > 1e-12).sum())
    s_imp = cfg.k_sparse * resid_sq / l1
    mu_s = max(l0 / (2.0 * l1) * s_imp, np.finfo(float).tiny)
    params.update(s_imp=s_imp, mu_s=mu_s, ls_residual_sq=resid_sq, ls_l1=l1, ls_l0=l0)
    u0 = l1_ls_bregman(a, tau_vec, s_imp, mu_s, outer_iters=cfg.bregman_iters,
                       cg_max_iter=cfg.cg_max_iter, cg_rel_tol=cfg.cg_rel_tol)
    return AlbedoVolume(op.grid, u0.reshape(op.grid.dims)), params


def _balanced(multiplier, t_data, resid_sq):
    if t_data <= 0.0 or resid_sq <= 1e-300:
        return 0.0
    return multiplier * t_data / resid_sq


def update_u(op: ForwardOperator, tau_values, recon_values, g_values,
             plan: _BlockPlan, targets, weights: dict, cfg: SscrConfig) -> np.ndarray:
    """Volume update: sparse least squares against all quadratic pulls.

    Solves (normalized by the data weight ``lam``) the split-Bregman
    iteration for ``||tau - A u||^2 + s_imp ||u||_1 + r_ut ||A u -
    recon||^2 + r_u sum_i ||B_i u - T_i||^2 + r_g ||u - g||^2`` where
    ``r_* = lambda_* / lam``. Like the initialization, the shrunk
    iterate v_J is returned, keeping the volume sparse; without the L1
    term the conjugate-gradient solution is returned directly.
    """
    lam = weights["lam"]
    r_ut = weights["lambda_ut"] / lam
    r_u = weights["lambda_u"] / lam
    r_g = weights["lambda_g"] / lam
    s_imp = weights["s_imp"]
    mu_s = weights["mu_s"]

    a = op.as_linear_map()
    n = a.shape[1]
    tau_vec = np.asarray(tau_values, float).reshape(-1)
    recon_vec = np.asarray(recon_values, float).reshape(-1)
    g_vec = np.asarray(g_values, float).reshape(-1)
    diag = r_u * plan.coverage + r_g
    scatter = plan.scatter(targets, op.grid.dims) if r_u > 0 else 0.0

    def apply(x):
        return (1.0 + r_ut) * a.apply_adjoint(a.apply(x)) + diag * x

    rhs_base = a.apply_adjoint(tau_vec + r_ut * recon_vec) + r_u * scatter + r_g * g_vec
    base_op = LinearMap((n, n), apply, apply)
    u, _ = cg_solve(base_op, rhs_base, x0=None, max_iter=cfg.cg_max_iter,
                    rel_tol=cfg.cg_rel_tol)
    if s_imp == 0.0:
        return u

    shifted = LinearMap((n, n), lambda x: apply(x) + mu_s * x,
                        lambda x: apply(x) + mu_s * x)
    shrink = s_imp / (2.0 * mu_s)
    b = np.zeros(n)
    v = np.zeros(n)
    for _ in range(cfg.bregman_iters):
        v = soft_threshold(u - b, shrink)
        u, _ = cg_solve(shifted, rhs_base + mu_s * (v + b), x0=u,
                        max_iter=cfg.cg_max_iter, rel_tol=cfg.cg_rel_tol)
        b = b + v - u
    return v


def objective(state: SscrState, hist: PhotonHistogram, op: ForwardOperator) -> float:
    """Full joint objective at the current state (surface prior counted 0).

    The two L0 penalties use the weights induced by the hard thresholds
    actually applied (``2 t^2`` relative to their quadratic companions).
    """
    p = state.params
    lam = p.get("lam", 0.0)
    lambda_t = p.get("lambda_t", 0.0)
    lambda_ut = p.get("lambda_ut", 0.0)
    lambda_u = p.get("lambda_u", 0.0)
    lambda_g = p.get("lambda_g", 0.0)

    total = nll(state.tau, hist)
    au = op.apply(state.u.values)
    geo = hist.geometry
    nx, ny = geo.scan_shape
    dims = (nx, ny, geo.num_bins)
    ptau = extract_patches(state.tau.values.reshape(dims), state.patch_cfg)
    pau = extract_patches(au.reshape(dims), state.patch_cfg)
    ds = state.dictionary.synthesize(state.coeffs)
    total += lambda_t * float(((ptau - ds) ** 2).sum())
    total += lambda_ut * float(((pau - ds) ** 2).sum())
    s_nnz = int(np.count_nonzero(state.coeffs))
    if s_nnz and np.isfinite(state.coeff_threshold):
        total += lambda_t * 2.0 * state.coeff_threshold**2 * s_nnz
    total += lam * float(((state.tau.values - au) ** 2).sum())
    total += lam * p.get("s_imp", 0.0) * float(np.abs(state.u.values).sum())
    g_vol = surface_to_volume(state.g)
    total += lambda_g * float(((state.u.values - g_vol.values) ** 2).sum())
    if state.matches is not None and lambda_u > 0:
        stacks = gather_block_stacks(state.u.values, state.matches, state.params["block"])
        total += lambda_u * triplet_residual(stacks, state.triplet)
        c_nnz = int(np.count_nonzero(state.triplet.c))
        if c_nnz and np.isfinite(state.triplet.threshold):
            total += lambda_u * 2.0 * state.triplet.threshold**2 * c_nnz
    return float(total)


def sscr_reconstruct(hist: PhotonHistogram, grid: VoxelGrid,
                     cfg: SscrConfig | None = None,
                     op: ForwardOperator | None = None):
    """Run the full reconstruction; returns (u, g, state).

    Deterministic for identical inputs. The state carries the resolved
    adaptive parameters, the per-iteration trace and the visited stage
    sequence; any stage failure is re-raised naming the stage.
    """
    cfg = cfg or SscrConfig()
    geo = hist.geometry
    if op is None:
        op = ForwardOperator(grid, geo)
    elif op.grid != grid or op.geometry != geo:
        raise DimensionMismatch("operator does not match histogram geometry/grid")

    nx, ny = geo.scan_shape
    dims = (nx, ny, geo.num_bins)
    patch_cfg = PatchConfig.default_for(dims, cfg.time_patch)
    dictionary = SignalDictionary.dct_for(patch_cfg.shape)

    stage = "init_signal"
    stages = []
    try:
        tau0 = init_tau(hist)
        stages.append("init_signal")
        stage = "init_volume"
        u0, init_params = init_u(tau0, op, cfg)
        stages.append("init_volume")
    except Exception as exc:
        raise RuntimeError(f"reconstruction failed in stage '{stage}': {exc}") from exc

    state = SscrState(
        tau=tau0,
        u=u0,
        g=SurfaceG.empty(grid),
        triplet=DictionaryTriplet.initial(1, 1),
        coeffs=np.zeros((dictionary.matrix.shape[0], 0)),
        coeff_threshold=np.inf,
        patch_cfg=patch_cfg,
        dictionary=dictionary,
        matches=None,
        params={**init_params, "lam": 0.0, "lambda_t": 0.0, "lambda_ut": 0.0,
                "lambda_u": 0.0, "lambda_g": 0.0, "block": cfg.block.block},
        stages=stages,
    )

    au0 = op.apply(u0.values)
    lam = None
    triplet = None
    tau, u = tau0, u0

    for it in range(cfg.outer_iters):
        try:
            stage = "surface"
            g = surfaciate(u)
            stages.append(stage)

            stage = "triplet"
            plan = _make_block_plan(u.values, cfg.block)
            if triplet is None or triplet.d_s.shape[0] != plan.stacks.shape[1] \
                    or triplet.d_n.shape[0] != plan.stacks.shape[2]:
                triplet = DictionaryTriplet.initial(plan.stacks.shape[1],
                                                    plan.stacks.shape[2])
            triplet = update_triplet(plan.stacks, triplet, cfg.keep_frac_blocks,
                                     cfg.triplet_sweeps)
            state.params["block"] = plan.block
            stages.append(stage)

            stage = "signal_coeffs"
            au = op.apply(u.values)
            ptau = extract_patches(tau.values.reshape(dims), patch_cfg)
            pau = extract_patches(au.reshape(dims), patch_cfg)
            coeffs, coeff_t = update_S(ptau, pau, dictionary, cfg.keep_frac_signal)
            recon = aggregate_patches(dictionary.synthesize(coeffs), patch_cfg, dims)
            recon = recon.reshape(geo.num_pairs, geo.num_bins)
            stages.append(stage)

            stage = "signal_update"
            if lam is None:
                lam = adaptive_lambda(hist, tau0, recon, au0)
                state.params["lam"] = lam
                state.params["lambda_t"] = lam
            tau = update_tau(hist, coeffs, dictionary, patch_cfg, au, lam, lam)
            stages.append(stage)

            stage = "volume_update"
            g_vol = surface_to_volume(g)
            t_data = lam * float(((tau.values - au) ** 2).sum())
            lambda_ut = _balanced(cfg.balance_ut, t_data,
                                  float(((au - recon) ** 2).sum()))
            lambda_u = _balanced(cfg.balance_u, t_data,
                                 triplet_residual(plan.stacks, triplet))
            lambda_g = _balanced(cfg.balance_g, t_data,
                                 float(((u.values - g_vol.values) ** 2).sum()))
            weights = {
                "lam": lam,
                "lambda_ut": lambda_ut,
                "lambda_u": lambda_u,
                "lambda_g": lambda_g,
                "s_imp": state.params["s_imp"],
                "mu_s": state.params["mu_s"],
            }
            targets = np.einsum("xa,nab,yb->nxy", triplet.d_s, triplet.c, triplet.d_n)
            u_new = update_u(op, tau.values, recon, g_vol.values, plan, targets,
                             weights, cfg)
            u = AlbedoVolume(grid, u_new.reshape(grid.dims))
            stages.append(stage)
        except Exception as exc:
            raise RuntimeError(
                f"reconstruction failed in stage '{stage}' (iteration {it + 1}): {exc}"
            ) from exc

        state.tau, state.u, state.g = tau, u, g
        state.triplet, state.coeffs, state.coeff_threshold = triplet, coeffs, coeff_t
        state.matches = plan.matches
        state.params.update(lambda_ut=lambda_ut, lambda_u=lambda_u, lambda_g=lambda_g)
        obj = objective(state, hist, op)
        state.trace.append(
            {
                "iteration": it + 1,
                "objective": obj,
                "nll": nll(tau, hist),
                "signal_residual_sq": float(((tau.values - op.apply(u.values)) ** 2).sum()),
                "surface_residual_sq": float(((u.values - g_vol.values) ** 2).sum()),
                "volume_nnz": int(np.count_nonzero(u.values)),
                "foreground": g.num_foreground,
            }
        )

    # the in-loop surface lags the volume by one update; report the
    # surface of the final volume
    state.g = surfaciate(u)
    state.stages = stages
    return u, state.g, state
