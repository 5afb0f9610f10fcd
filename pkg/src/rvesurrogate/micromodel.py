"""Point-ensemble micro-model: constitutive laws and field generation.

The mesh-based volume element is replaced by an ensemble of constitutive
material points.  Each point sees a perturbed copy of the macro deformation
through a fixed random linear concentration map acting on ``F - I`` (in-plane
components, plane strain).  Elastic fiber points follow a logarithmic
hyperelastic law; matrix points follow finite-strain J2 elasto-plasticity
with saturating isotropic hardening, integrated with an exponential plastic
flow update that keeps det(F^p) = 1 exactly up to roundoff.

Per loading step the ensemble emits the equivalent-plastic-strain field over
the matrix points, the von Mises equivalent Kirchhoff stress field over all
points, and the volume-average first Piola-Kirchhoff stress.

Stresses are carried in MPa internally; moduli are declared in GPa and
converted on access.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensorlab as tl
from .pathgen import LoadingPath, make_rng, u_to_f

logger = logging.getLogger(__name__)

_SQRT_3_2 = np.sqrt(1.5)
_NEWTON_TOL_FACTOR = 1e-12   # on |residual| relative to the initial yield stress
_NEWTON_MAX_ITER = 50
_BISECT_MAX_ITER = 200
_DET_FP_DRIFT_TOL = 1e-6


class InvalidDeformationError(ValueError):
    """Deformation state with non-positive Jacobian (det F <= 0)."""


@dataclass(frozen=True)
class FiberParams:
    """Hyperelastic fiber constants, moduli in GPa."""

    k: float = 16.67
    mu: float = 12.50

    def __post_init__(self):
        if self.k <= 0 or self.mu <= 0:
            raise ValueError("fiber moduli must be positive")

    @property
    def k_mpa(self) -> float:
        return self.k * 1e3

    @property
    def mu_mpa(self) -> float:
        return self.mu * 1e3


@dataclass(frozen=True)
class MatrixParams:
    """J2 elasto-plastic matrix constants.

    ``k``/``mu`` in GPa; ``tau_y0`` (initial yield) and ``y_hard``
    (hardening saturation) in MPa; ``k_hard`` dimensionless exponent of the
    saturating hardening stress y_hard * (1 - exp(-k_hard * gamma)).
    """

    k: float = 2.50
    mu: float = 1.15
    tau_y0: float = 100.0
    y_hard: float = 20.0
    k_hard: float = 30.0

    def __post_init__(self):
        if min(self.k, self.mu, self.tau_y0, self.y_hard, self.k_hard) <= 0:
            raise ValueError("matrix constants must be positive")

    @property
    def k_mpa(self) -> float:
        return self.k * 1e3

    @property
    def mu_mpa(self) -> float:
        return self.mu * 1e3

    def hardening(self, gamma) -> np.ndarray:
        return self.y_hard * (1.0 - np.exp(-self.k_hard * np.asarray(gamma)))

    def hardening_slope(self, gamma) -> np.ndarray:
        return self.y_hard * self.k_hard * np.exp(-self.k_hard * np.asarray(gamma))


FIBER_DEFAULTS = FiberParams()
MATRIX_DEFAULTS = MatrixParams()


@dataclass
class PlasticState:
    """Plastic deformation gradient and accumulated equivalent plastic strain."""

    fp: np.ndarray      # (..., 3, 3)
    gamma: np.ndarray   # (...)

    @classmethod
    def initial(cls, batch_shape=()) -> "PlasticState":
        fp = np.broadcast_to(np.eye(3), tuple(batch_shape) + (3, 3)).copy()
        return cls(fp=fp, gamma=np.zeros(batch_shape))

    def copy(self) -> "PlasticState":
        return PlasticState(fp=self.fp.copy(), gamma=self.gamma.copy())


def fiber_energy(f, params: FiberParams = FIBER_DEFAULTS) -> np.ndarray:
    """Elastic potential of the fiber law, MPa."""
    f = np.asarray(f, dtype=np.float64)
    det_f = tl.det(f)
    if np.any(det_f <= 0.0):
        raise InvalidDeformationError("det F <= 0 in fiber_energy")
    c = tl.symmetrize(np.swapaxes(f, -1, -2) @ f)
    log_vals = np.log(tl.sym_eig(c).values)
    dev_log = log_vals - np.mean(log_vals, axis=-1, keepdims=True)
    ln_j = np.log(det_f)
    return 0.5 * params.k_mpa * ln_j**2 + 0.25 * params.mu_mpa * np.sum(
        dev_log**2, axis=-1
    )


def fiber_stress(f, params: FiberParams = FIBER_DEFAULTS):
    """First Piola-Kirchhoff stress and von Mises Kirchhoff stress (MPa)."""
    f = np.asarray(f, dtype=np.float64)
    det_f = tl.det(f)
    if np.any(det_f <= 0.0):
        raise InvalidDeformationError("det F <= 0 in fiber_stress")
    c = tl.symmetrize(np.swapaxes(f, -1, -2) @ f)
    vals, vecs = tl.sym_eig(c)
    log_vals = np.log(vals)
    dev_log = log_vals - np.mean(log_vals, axis=-1, keepdims=True)
    ln_j = np.log(det_f)

    f_inv_t = np.swapaxes(tl.inv(f), -1, -2)
    ln_c_dev = tl.reassemble(dev_log, vecs)
    p = params.k_mpa * ln_j[..., None, None] * f_inv_t + f_inv_t @ (
        params.mu_mpa * ln_c_dev
    )
    tau_eq = _SQRT_3_2 * params.mu_mpa * np.sqrt(np.sum(dev_log**2, axis=-1))
    return p, tau_eq


def matrix_energy(f, fp, params: MatrixParams = MATRIX_DEFAULTS) -> np.ndarray:
    """Elastic potential of the matrix law at frozen plastic state, MPa."""
    f = np.asarray(f, dtype=np.float64)
    det_f = tl.det(f)
    if np.any(det_f <= 0.0):
        raise InvalidDeformationError("det F <= 0 in matrix_energy")
    fe = f @ tl.inv(np.asarray(fp, dtype=np.float64))
    ce = tl.symmetrize(np.swapaxes(fe, -1, -2) @ fe)
    log_vals = np.log(tl.sym_eig(ce).values)
    dev_log = log_vals - np.mean(log_vals, axis=-1, keepdims=True)
    ln_j = np.log(det_f)
    return 0.5 * params.k_mpa * ln_j**2 + 0.25 * params.mu_mpa * np.sum(
        dev_log**2, axis=-1
    )


def _solve_return_scalar(tau_tr, gamma0, params: MatrixParams):
    """Plastic multiplier from the scalar yield-consistency equation.

    Solves ``tau_tr - 3 mu x - tau_y0 - R(gamma0 + x) = 0`` per entry with a
    damped Newton iteration; entries that fail to converge fall back to
    bisection on [0, tau_tr / 3 mu] (the residual is strictly decreasing).
    """
    mu3 = 3.0 * params.mu_mpa
    tol = _NEWTON_TOL_FACTOR * params.tau_y0

    def residual(x):
        return tau_tr - mu3 * x - params.tau_y0 - params.hardening(gamma0 + x)

    hi = tau_tr / mu3
    x = np.zeros_like(tau_tr)
    converged = np.zeros(tau_tr.shape, dtype=bool)
    for _ in range(_NEWTON_MAX_ITER):
        res = residual(x)
        converged = np.abs(res) <= tol
        if np.all(converged):
            break
        slope = -mu3 - params.hardening_slope(gamma0 + x)
        x_new = x - res / slope
        x_new = np.clip(x_new, 0.0, hi)
        x = np.where(converged, x, x_new)
    converged = np.abs(residual(x)) <= tol

    if not np.all(converged):
        stuck = ~converged
        lo_b = np.zeros(np.count_nonzero(stuck))
        hi_b = hi[stuck]
        g0 = gamma0[stuck]
        t0 = tau_tr[stuck]
        for _ in range(_BISECT_MAX_ITER):
            mid = 0.5 * (lo_b + hi_b)
            rm = t0 - mu3 * mid - params.tau_y0 - params.hardening(g0 + mid)
            take_low = rm > 0.0
            lo_b = np.where(take_low, mid, lo_b)
            hi_b = np.where(take_low, hi_b, mid)
        x[stuck] = 0.5 * (lo_b + hi_b)
        if np.any(np.abs(residual(x)) > 100 * tol):
            raise RuntimeError("plastic return mapping failed to converge")
    return x


def matrix_update(f, state: PlasticState, params: MatrixParams = MATRIX_DEFAULTS):
    """Elastic-predictor / plastic-corrector update of the matrix points.

    Returns ``(p, tau_eq, new_state)``.  The trial elastic state is built
    from the frozen plastic deformation; when the trial von Mises stress
    exceeds the current yield stress the plastic multiplier solves the
    scalar consistency equation and the plastic flow is integrated with the
    tensor exponential of the trial-frame flow normal, which shares the
    trial eigenvectors and keeps the update exactly isochoric.
    """
    f = np.asarray(f, dtype=np.float64)
    det_f = tl.det(f)
    if np.any(det_f <= 0.0):
        raise InvalidDeformationError("det F <= 0 in matrix_update")

    mu = params.mu_mpa
    fp_inv = tl.inv(state.fp)
    fe_tr = f @ fp_inv
    ce_tr = tl.symmetrize(np.swapaxes(fe_tr, -1, -2) @ fe_tr)
    vals, vecs = tl.sym_eig(ce_tr)
    if np.any(vals <= 0.0):
        raise InvalidDeformationError("degenerate trial elastic stretch")
    log_vals = np.log(vals)
    dev_log = log_vals - np.mean(log_vals, axis=-1, keepdims=True)
    ln_j = np.log(det_f)

    tau_tr = _SQRT_3_2 * mu * np.sqrt(np.sum(dev_log**2, axis=-1))
    f_trial = tau_tr - params.tau_y0 - params.hardening(state.gamma)
    plastic = f_trial > 0.0

    dgamma = np.zeros_like(tau_tr)
    if np.any(plastic):
        dgamma[plastic] = _solve_return_scalar(
            tau_tr[plastic], state.gamma[plastic], params
        )

    # 3 mu dgamma / tau_tr scales the deviatoric log strain back to the
    # updated yield surface; zero wherever the step is elastic.
    safe_tau = np.where(tau_tr > 0.0, tau_tr, 1.0)
    shrink = np.where(plastic, 3.0 * mu * dgamma / safe_tau, 0.0)

    if np.any(plastic):
        exp_flow = tl.reassemble(np.exp(0.5 * shrink[..., None] * dev_log), vecs)
        # elastic entries keep their plastic state bit-identical
        fp_new = np.where(plastic[..., None, None], exp_flow @ state.fp, state.fp)
    else:
        fp_new = state.fp.copy()
    det_fp = tl.det(fp_new)
    drift = np.abs(det_fp - 1.0)
    if np.any(drift > _DET_FP_DRIFT_TOL):
        bad = drift > _DET_FP_DRIFT_TOL
        logger.warning(
            "renormalizing %d plastic deformation gradients (max det drift %.3e)",
            int(np.count_nonzero(bad)),
            float(drift.max()),
        )
        rescaled = fp_new * det_fp[..., None, None] ** (-1.0 / 3.0)
        fp_new = np.where(bad[..., None, None], rescaled, fp_new)

    log_new = log_vals - shrink[..., None] * dev_log
    dev_log_new = log_new - np.mean(log_new, axis=-1, keepdims=True)
    # mu * C_e^{-1} (ln C_e)^dev in the updated elastic frame
    m_mid = tl.reassemble(mu * np.exp(-log_new) * dev_log_new, vecs)

    fe_new = f @ tl.inv(fp_new)
    f_inv_t = np.swapaxes(tl.inv(f), -1, -2)
    p = params.k_mpa * ln_j[..., None, None] * f_inv_t + fe_new @ m_mid @ np.swapaxes(
        tl.inv(fp_new), -1, -2
    )
    tau_eq = tau_tr - 3.0 * mu * dgamma
    return p, tau_eq, PlasticState(fp=fp_new, gamma=state.gamma + dgamma)


@dataclass
class RveEnsemble:
    """Fixed random concentration maps plus material parameters.

    ``concentrations`` maps the in-plane components of ``F_macro - I``
    (ordered xx, xy, yx, yy) to the local perturbation per point; matrix
    points come first, fiber points after.
    """

    concentrations: np.ndarray  # (n_points, 4, 4)
    n_matrix: int
    n_fiber: int
    perturbation_amplitude: float
    seed: int
    fiber: FiberParams = field(default_factory=FiberParams)
    matrix: MatrixParams = field(default_factory=MatrixParams)

    @property
    def n_points(self) -> int:
        return self.n_matrix + self.n_fiber

    @property
    def d_gamma(self) -> int:
        return self.n_matrix

    @property
    def d_tau(self) -> int:
        return self.n_points

    def local_deformations(self, f_macro) -> np.ndarray:
        """Per-point deformation gradients for a macro F, shape (n, 3, 3)."""
        f_macro = np.asarray(f_macro, dtype=np.float64)
        v = np.array(
            [
                f_macro[0, 0] - 1.0,
                f_macro[0, 1],
                f_macro[1, 0],
                f_macro[1, 1] - 1.0,
            ]
        )
        local = self.concentrations @ v
        out = np.broadcast_to(np.eye(3), (self.n_points, 3, 3)).copy()
        out[:, 0, 0] += local[:, 0]
        out[:, 0, 1] += local[:, 1]
        out[:, 1, 0] += local[:, 2]
        out[:, 1, 1] += local[:, 3]
        return out


def build_ensemble(
    d_gamma: int,
    n_fiber: int,
    perturbation_amplitude: float,
    seed: int,
    fiber: FiberParams = FIBER_DEFAULTS,
    matrix: MatrixParams = MATRIX_DEFAULTS,
) -> RveEnsemble:
    """Random ensemble of concentration maps with exact-identity mean.

    Each map is identity plus a zero-mean random linear perturbation with
    operator norm at most ``perturbation_amplitude``; the ensemble mean is
    re-centered to the exact identity after drawing.
    """
    if d_gamma < 1 or n_fiber < 0:
        raise ValueError("need at least one matrix point and n_fiber >= 0")
    if not 0.0 <= perturbation_amplitude < 1.0:
        raise ValueError("perturbation_amplitude must be in [0, 1)")
    n = d_gamma + n_fiber
    perturb = np.zeros((n, 4, 4))
    if perturbation_amplitude > 0.0:
        rng = make_rng(seed)
        g = rng.standard_normal((n, 4, 4))
        op_norm = np.linalg.svd(g, compute_uv=False)[:, 0]
        radius = perturbation_amplitude * rng.uniform(0.0, 1.0, size=n)
        perturb = g * (radius / op_norm)[:, None, None]
        perturb -= perturb.mean(axis=0)
    conc = np.broadcast_to(np.eye(4), (n, 4, 4)) + perturb
    return RveEnsemble(
        concentrations=np.ascontiguousarray(conc),
        n_matrix=d_gamma,
        n_fiber=n_fiber,
        perturbation_amplitude=perturbation_amplitude,
        seed=seed,
        fiber=fiber,
        matrix=matrix,
    )


@dataclass
class FieldSnapshot:
    """State-variable fields and homogenized stress at one loading step."""

    gamma_field: np.ndarray  # (d_gamma,), dimensionless
    tau_field: np.ndarray    # (d_tau,), MPa
    p_hom: np.ndarray        # (3, 3), MPa


@dataclass
class SequenceFields:
    """Full per-step field history of one loading path."""

    gamma: np.ndarray        # (n_steps, d_gamma)
    tau: np.ndarray          # (n_steps, d_tau)
    p_hom: np.ndarray        # (n_steps, 3, 3)
    truncated: bool = False

    def __len__(self) -> int:
        return self.gamma.shape[0]

    def __getitem__(self, t: int) -> FieldSnapshot:
        return FieldSnapshot(self.gamma[t], self.tau[t], self.p_hom[t])


def _step_fields(ensemble: RveEnsemble, f_macro, state: PlasticState):
    """Advance matrix points one increment and evaluate all fields."""
    local = ensemble.local_deformations(f_macro)
    n_m = ensemble.n_matrix
    p_mat, tau_mat, new_state = matrix_update(local[:n_m], state, ensemble.matrix)
    if ensemble.n_fiber > 0:
        p_fib, tau_fib = fiber_stress(local[n_m:], ensemble.fiber)
        tau_all = np.concatenate([tau_mat, tau_fib])
        p_all = np.concatenate([p_mat, p_fib], axis=0)
    else:
        tau_all = tau_mat
        p_all = p_mat
    return new_state, new_state.gamma.copy(), tau_all, p_all.mean(axis=0)


def run_sequence(
    path: LoadingPath, ensemble: RveEnsemble, max_halvings: int = 8
) -> SequenceFields:
    """Evolve the ensemble along a loading path and collect field histories.

    Each macro step is attempted in one increment; on constitutive failure
    the increment is retried with 2, 4, ..., 2**max_halvings linear
    sub-steps.  If the target state itself is invalid the sequence is
    truncated at the last converged step and flagged.
    """
    n_steps = len(path)
    gamma_out = np.zeros((n_steps, ensemble.d_gamma))
    tau_out = np.zeros((n_steps, ensemble.d_tau))
    p_out = np.zeros((n_steps, 3, 3))

    state = PlasticState.initial((ensemble.n_matrix,))
    f_prev = np.eye(3)
    truncated = False
    kept = 0
    for t in range(n_steps):
        f_target = u_to_f(path.stretches[t])
        done = False
        for halving in range(max_halvings + 1):
            n_sub = 2**halving
            trial_state = state.copy()
            try:
                for j in range(1, n_sub + 1):
                    f_j = f_prev + (j / n_sub) * (f_target - f_prev)
                    trial_state, gamma_f, tau_f, p_hom = _step_fields(
                        ensemble, f_j, trial_state
                    )
            except (InvalidDeformationError, RuntimeError):
                continue
            state = trial_state
            gamma_out[t] = gamma_f
            tau_out[t] = tau_f
            p_out[t] = p_hom
            f_prev = f_target
            kept = t + 1
            done = True
            break
        if not done:
            truncated = True
            break

    return SequenceFields(
        gamma=gamma_out[:kept],
        tau=tau_out[:kept],
        p_hom=p_out[:kept],
        truncated=truncated,
    )
