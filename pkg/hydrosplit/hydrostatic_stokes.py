"""
Hydrostatic Stokes saddle-point solves, projectors and the inf-sup constant.

The momentum row is written ``A u − Bᵀ p = rhs_u`` and the constraint row
``B u = rhs_p``, where B_ij = ∫_Ω q_i ∇x·v_j. With this sign ``Bᵀ p`` is the
discrete gradient of the surface pressure, so p approximates p_s itself.
Pressures are normalized to zero mean over S.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    apply_dirichlet,
    assemble_divergence,
    assemble_gradient_load,
    assemble_mass,
    assemble_pressure_load,
    assemble_stiffness,
    assemble_surface_mass,
    assemble_zload,
    assemble_zstiffness,
    mask_columns,
)
from .exceptions import EigSolverStalled, SingularSystem, SolverDiverged, ValidationError
from .fe_spaces import DiscreteField, FESpace, zero_mean
from .models import SolverConfig, SolverMethod, SolveStats
from .utils import default_rng

logger = logging.getLogger(__name__)

#: Fraction of ``tol`` the estimated iteration error has to reach.
ERROR_TARGET = 0.5
#: Pressure increments this small relative to p are at roundoff.
ROUNDOFF = 1e-14
#: Smallest relative residual requested from the inner CG solves.
INNER_RTOL_FLOOR = 1e-14


class _Contraction:
    """Running estimate of the contraction factor q of a linear iteration.

    q is the largest ratio of successive increment norms over a short
    window. An iterate whose next increment is δ lies within ‖δ‖/(1 − q)
    of the fixed point. Increments that stop shrinking over the whole
    window mark the roundoff floor.
    """

    def __init__(self, window: int = 3):
        self.window = window
        self._sizes: Deque[float] = deque(maxlen=window + 1)
        self.stalled = False

    def push(self, size: float) -> float:
        self._sizes.append(size)
        s = list(self._sizes)
        ratios = [b / a for a, b in zip(s, s[1:]) if a > 0.0]
        self.stalled = len(ratios) == self.window and min(ratios) >= 1.0
        return max(ratios) if ratios else 1.0


@dataclass
class SaddleSystem:
    """Masked blocks and right-hand sides of one saddle-point problem."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    Xh: FESpace
    Qh: FESpace
    rhs_u: np.ndarray
    rhs_p: Optional[np.ndarray] = None
    mean_constraint: str = "multiplier"

    def __post_init__(self):
        nu, nq = self.Xh.dof_count, self.Qh.dof_count
        if self.A.shape != (nu, nu) or self.B.shape != (nq, nu) or len(self.rhs_u) != nu:
            raise ValidationError("Saddle system blocks do not match the spaces")
        if self.rhs_p is None:
            self.rhs_p = np.zeros(nq)


class SaddleSolver:
    """Reusable solver for a fixed (A, B) pair.

    The monolithic path factorizes the bordered system once. The iterative
    paths keep the weighting, the measured Uzawa bound and a factorization
    of A that preconditions every inner CG solve. They stop when the
    residual is below ``tol`` and the estimated distance of (u, p) to the
    fixed point is below ``ERROR_TARGET·tol`` relative to max(1, ‖·‖).
    """

    def __init__(
        self,
        A: sp.spmatrix,
        B: sp.spmatrix,
        Xh: FESpace,
        Qh: FESpace,
        cfg: Optional[SolverConfig] = None,
        seed: Optional[int] = None,
    ):
        self.cfg = cfg or SolverConfig()
        self.Xh, self.Qh = Xh, Qh
        self.mask = Xh.dirichlet_mask
        self.A = apply_dirichlet(A, self.mask).tocsr()
        self.B = mask_columns(B, self.mask)
        self.m = Qh.mean_weights
        self.seed = seed
        self._lu = None
        self._a_lu = None
        self._uzawa_lmax: Optional[float] = None
        # lumped surface mass
        self.W = self.m.copy()

        if self.cfg.method is SolverMethod.MONOLITHIC_DIRECT:
            self._factorize()
        elif self.cfg.method is SolverMethod.UZAWA:
            self._uzawa_lmax = self._schur_lmax()
            logger.debug("Uzawa: lambda_max = %.6g", self._uzawa_lmax)

    def _factorize(self) -> None:
        nu, nq = self.A.shape[0], self.B.shape[0]
        m = sp.csr_matrix(self.m.reshape(-1, 1))
        K = sp.bmat(
            [
                [self.A, -self.B.T, None],
                [-self.B, None, m],
                [None, m.T, None],
            ],
            format="csc",
        )
        try:
            self._lu = spla.splu(K)
        except RuntimeError as exc:
            raise SingularSystem(f"Saddle-point factorization failed: {exc}")
        logger.debug("monolithic saddle factorization: %d unknowns", nu + nq + 1)

    def _preconditioner(self) -> spla.LinearOperator:
        if self._a_lu is None:
            try:
                lu = spla.splu(self.A.tocsc())
            except RuntimeError as exc:
                raise SingularSystem(f"Velocity block factorization failed: {exc}")
            self._a_lu = spla.LinearOperator(self.A.shape, matvec=lu.solve, dtype=float)
        return self._a_lu

    def _inner(self, op, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        rtol = max(1e-3 * self.cfg.tol, INNER_RTOL_FLOOR)
        x, info = spla.cg(
            op, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=10 * op.shape[0], M=self._preconditioner()
        )
        if info != 0:
            raise SolverDiverged("inner cg", info, float(np.linalg.norm(op @ x - rhs)))
        return x

    def _settled(
        self,
        contraction: _Contraction,
        dp: np.ndarray,
        du: np.ndarray,
        u: np.ndarray,
        p: np.ndarray,
        r: np.ndarray,
    ) -> bool:
        """True when (u, p) is within ERROR_TARGET·tol of the fixed point.

        With the residual below ``tol``, increments at roundoff or no longer
        shrinking also stop the iteration.
        """
        tol = self.cfg.tol
        size = float(np.linalg.norm(dp))
        q = contraction.push(size)
        u_scale = max(1.0, float(np.linalg.norm(u)))
        p_scale = max(1.0, float(np.linalg.norm(p)))
        if np.linalg.norm(r) > tol * u_scale:
            return False
        if size <= ROUNDOFF * p_scale:
            return True
        if contraction.stalled:
            logger.debug("saddle iteration stalled at increment %.3e", size / p_scale)
            return True
        if q >= 1.0:
            return False
        target = ERROR_TARGET * tol
        return (
            size / (1.0 - q) <= target * p_scale
            and float(np.linalg.norm(du)) * q / (1.0 - q) <= target * u_scale
        )

    def _schur_lmax(self) -> float:
        """Largest eigenvalue of W^{-1/2} B A⁻¹ Bᵀ W^{-1/2}."""
        w = 1.0 / np.sqrt(self.W)

        def matvec(q):
            q = np.ravel(q)
            return w * (self.B @ self._inner(self.A, self.B.T @ (w * q)))

        nq = self.B.shape[0]
        S = spla.LinearOperator((nq, nq), matvec=matvec, dtype=float)
        v0 = default_rng(self.seed).standard_normal(nq)
        if nq <= 3:
            dense = np.column_stack([matvec(e) for e in np.eye(nq)])
            return float(np.max(np.linalg.eigvalsh(0.5 * (dense + dense.T))))
        return float(spla.eigsh(S, k=1, which="LA", v0=v0, tol=1e-8, return_eigenvectors=False)[0])

    @property
    def uzawa_bound(self) -> float:
        """Step size 2/λ_max above which Uzawa diverges."""
        if self._uzawa_lmax is None:
            self._uzawa_lmax = self._schur_lmax()
        return 2.0 / self._uzawa_lmax

    def _project(self, p: np.ndarray) -> np.ndarray:
        return p - float(self.m @ p) / float(self.m.sum())

    def residuals(self, u: np.ndarray, p: np.ndarray, rhs_u: np.ndarray, rhs_p: np.ndarray) -> Tuple[float, float]:
        ru = np.linalg.norm(self.A @ u - self.B.T @ p - rhs_u) / max(np.linalg.norm(rhs_u), 1e-300)
        rp = np.linalg.norm(self.B @ u - rhs_p) / max(1.0, np.linalg.norm(u))
        return float(ru), float(rp)

    def solve(
        self, rhs_u: np.ndarray, rhs_p: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray, SolveStats]:
        """Solve for (u, p); Dirichlet entries of ``rhs_u`` are ignored.

        Raises:
            SolverDiverged: If an iterative method exhausts ``max_iter``.
        """
        rhs_u = np.where(self.mask, 0.0, rhs_u)
        nq = self.B.shape[0]
        rhs_p = np.zeros(nq) if rhs_p is None else np.asarray(rhs_p, dtype=float)
        if not np.any(rhs_u) and not np.any(rhs_p):
            return np.zeros_like(rhs_u), np.zeros(nq), SolveStats(self.cfg.method.value, 0, 0.0, 0.0)

        method = self.cfg.method
        if method is SolverMethod.MONOLITHIC_DIRECT:
            if self._lu is None:
                self._factorize()
            nu = len(rhs_u)
            x = self._lu.solve(np.concatenate([rhs_u, -rhs_p, [0.0]]))
            u, p = x[:nu], self._project(x[nu : nu + nq])
            ru, rp = self.residuals(u, p, rhs_u, rhs_p)
            return u, p, SolveStats(method.value, 1, ru, rp)
        if method is SolverMethod.UZAWA:
            return self._uzawa(rhs_u, rhs_p)
        return self._augmented(rhs_u, rhs_p)

    def _uzawa(self, rhs_u, rhs_p):
        step = self.cfg.rho / self._uzawa_lmax
        if step >= self.uzawa_bound:
            logger.warning("Uzawa step %.3g is above the measured bound %.3g", step, self.uzawa_bound)
        p = np.zeros(self.B.shape[0])
        u = np.zeros_like(rhs_u)
        contraction = _Contraction()
        for it in range(1, self.cfg.max_iter + 1):
            u_prev = u
            u = self._inner(self.A, rhs_u + self.B.T @ p, x0=u_prev)
            r = self.B @ u - rhs_p
            dp = self._project(-step * r / self.W)
            if self._settled(contraction, dp, u - u_prev, u, p, r):
                ru, rp = self.residuals(u, p, rhs_u, rhs_p)
                logger.debug("uzawa converged in %d iterations", it)
                return u, p, SolveStats("uzawa", it, ru, rp)
            p = p + dp
        raise SolverDiverged("uzawa", self.cfg.max_iter, float(np.linalg.norm(r)))

    def _augmented(self, rhs_u, rhs_p):
        gamma = self.cfg.gamma
        winv = 1.0 / self.W
        A, B = self.A, self.B
        op = spla.LinearOperator(
            A.shape, matvec=lambda x: A @ x + gamma * (B.T @ (winv * (B @ x))), dtype=float
        )
        p = np.zeros(B.shape[0])
        u = np.zeros_like(rhs_u)
        lifted = gamma * (B.T @ (winv * rhs_p))
        contraction = _Contraction()
        for it in range(1, self.cfg.max_iter + 1):
            u_prev = u
            u = self._inner(op, rhs_u + B.T @ p + lifted, x0=u_prev)
            r = B @ u - rhs_p
            dp = self._project(-self.cfg.rho * gamma * winv * r)
            if self._settled(contraction, dp, u - u_prev, u, p, r):
                ru, rp = self.residuals(u, p, rhs_u, rhs_p)
                logger.debug("augmented Lagrangian converged in %d iterations", it)
                return u, p, SolveStats("augmented_lagrangian", it, ru, rp)
            p = p + dp
        raise SolverDiverged("augmented_lagrangian", self.cfg.max_iter, float(np.linalg.norm(r)))


def solve_saddle(
    system: SaddleSystem, cfg: Optional[SolverConfig] = None
) -> Tuple[DiscreteField, DiscreteField, SolveStats]:
    """One-off saddle solve returning fields on X_h and Q_h."""
    solver = SaddleSolver(system.A, system.B, system.Xh, system.Qh, cfg)
    u, p, stats = solver.solve(system.rhs_u, system.rhs_p)
    return DiscreteField(system.Xh, u), DiscreteField(system.Qh, p), stats


def estimate_uzawa_bound(
    A: sp.spmatrix, B: sp.spmatrix, Xh: FESpace, Qh: FESpace, seed: Optional[int] = None
) -> float:
    """2/λ_max of the lumped-mass-weighted Schur complement."""
    solver = SaddleSolver(A, B, Xh, Qh, SolverConfig(method=SolverMethod.UZAWA), seed)
    return solver.uzawa_bound


def stokes_projector(
    Xh: FESpace,
    Qh: FESpace,
    v: Optional[DiscreteField] = None,
    grad_v: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    q: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    cfg: Optional[SolverConfig] = None,
    workers: int = 1,
) -> Tuple[DiscreteField, DiscreteField]:
    """Hydrostatic Stokes projection (I_h v, J_h q).

    Solves (∇(I_h v − v), ∇v_h) − (J_h q − q, ∇x·⟨v_h⟩)_S = 0 and
    (∇x·⟨I_h v⟩, q_h)_S = 0 for all (v_h, q_h).

    Args:
        v: Velocity already in X_h (its stiffness product is the data).
        grad_v: Analytic velocity gradient, shape (n, 2, 3), used when ``v``
            is not given.
        q: Analytic surface pressure; None means q = 0.
    """
    if v is None and grad_v is None:
        raise ValidationError("stokes_projector needs v or grad_v")
    K = assemble_stiffness(Xh, workers)
    B = assemble_divergence(Qh, Xh, workers)
    rhs = K @ v.coefficients if v is not None else assemble_gradient_load(Xh, grad_v, workers)
    if q is not None:
        rhs = rhs - assemble_pressure_load(Xh, q, workers)
    cfg = cfg or SolverConfig(tol=1e-12)
    u, p, stats = SaddleSolver(K, B, Xh, Qh, cfg).solve(rhs)
    logger.debug("stokes projector: %s", stats)
    return DiscreteField(Xh, u), zero_mean(DiscreteField(Qh, p))


def yh_projector(
    Yh: FESpace,
    dz_v3: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    v3: Optional[DiscreteField] = None,
    workers: int = 1,
) -> DiscreteField:
    """H₀(∂z) projection K_h v₃ onto Y_h."""
    Kz = assemble_zstiffness(Yh, workers)
    if v3 is not None:
        rhs = Kz @ v3.coefficients
    elif dz_v3 is not None:
        rhs = assemble_zload(Yh, dz_v3, workers)
    else:
        raise ValidationError("yh_projector needs dz_v3 or v3")
    mask = Yh.dirichlet_mask
    rhs = np.where(mask, 0.0, rhs)
    if not np.any(rhs):
        return DiscreteField.zeros(Yh)
    try:
        y = spla.splu(apply_dirichlet(Kz, mask).tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SingularSystem(f"z-stiffness factorization failed: {exc}")
    return DiscreteField(Yh, y)


@dataclass
class InfSupResult:
    """Discrete inf-sup constant of one (X_h, Q_h) pair."""

    beta: float
    iterations: int
    velocity_dofs: int
    pressure_dofs: int
    h: float


def schur_pencil(Xh: FESpace, Qh: FESpace, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Dense S = B A⁻¹ Bᵀ (A the masked H¹ Gram matrix) and the surface mass."""
    mask = Xh.dirichlet_mask
    A = apply_dirichlet(assemble_stiffness(Xh, workers) + assemble_mass(Xh, workers), mask)
    B = mask_columns(assemble_divergence(Qh, Xh, workers), mask)
    lu = spla.splu(A.tocsc())
    X = lu.solve(B.T.toarray())
    S = B @ X
    S = 0.5 * (S + S.T)
    MS = assemble_surface_mass(Qh, workers).toarray()
    return np.asarray(S), MS


def compute_infsup(
    Xh: FESpace,
    Qh: FESpace,
    tol: float = 1e-10,
    max_iter: int = 2000,
    seed: Optional[int] = None,
    workers: int = 1,
) -> InfSupResult:
    """β_h = sqrt(λ_min) of S q = λ M_S q on zero-mean pressures.

    Inverse power iteration with the constant mode shifted out of the
    bottom of the spectrum.

    Raises:
        EigSolverStalled: If the Rayleigh quotient has not settled within
            ``max_iter`` iterations.
    """
    S, MS = schur_pencil(Xh, Qh, workers)
    m = MS.sum(axis=1)
    shift = 4.0 * float(np.max(np.diag(S) / np.diag(MS))) + 1.0
    Sd = S + shift * np.outer(m, m) / float(m.sum())
    lu = sla.lu_factor(Sd)

    x = default_rng(seed).standard_normal(len(m))
    x -= float(m @ x) / float(m.sum())
    x /= np.sqrt(x @ MS @ x)
    lam = float(x @ Sd @ x)
    change = np.inf
    for it in range(1, max_iter + 1):
        y = sla.lu_solve(lu, MS @ x)
        y /= np.sqrt(y @ MS @ y)
        new = float(y @ Sd @ y)
        change = abs(new - lam) / max(abs(new), 1e-300)
        x, lam = y, new
        if change <= tol:
            h = Xh.mesh.h
            logger.info("inf-sup: beta=%.6g after %d iterations (h=%.4g)", np.sqrt(lam), it, h)
            return InfSupResult(
                beta=float(np.sqrt(max(lam, 0.0))),
                iterations=it,
                velocity_dofs=Xh.dof_count,
                pressure_dofs=Qh.dof_count,
                h=h,
            )
    raise EigSolverStalled(max_iter, change)
