"""
Time loop of the viscosity-splitting scheme.

Each step computes the vertical velocity from u^m (Sub-step 0, or the exact
column integral for the Q variant), a convection-diffusion velocity u^{m+1/2}
(Sub-step 1) and a hydrostatic Stokes correction (u^{m+1}, p^{m+1})
(Sub-step 2). The Sub-step 2 operator does not depend on time and is
factorized once per run.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    apply_dirichlet,
    assemble_convection,
    assemble_coriolis,
    assemble_divergence,
    assemble_load,
    assemble_mass,
    assemble_source,
    assemble_stiffness,
    assemble_surface_mass,
    assemble_traction,
)
from .exceptions import HaltedByHook, SingularSystem, SolverDiverged, ValidationError
from .fe_spaces import (
    DiscreteField,
    FESpace,
    _scalar_view,
    apply_mask,
    build_pressure_space,
    build_velocity_space,
    build_vertical_space,
    interpolate,
)
from .hydrostatic_stokes import SaddleSolver, stokes_projector
from .io import LEDGER_COLUMNS, CsvTable, read_checkpoint, write_checkpoint
from .mesh import ColumnMesh
from .models import (
    CoriolisMode,
    ElementPair,
    EnergyRecord,
    InitMode,
    SchemeConfig,
    SolverConfig,
    SolverMethod,
    SolveStats,
    Variant,
)
from .utils import mass_norm
from .vertical_velocity import VerticalEvaluator, VerticalSolver, build_evaluator

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]
TimeField = Callable[[np.ndarray, float], np.ndarray]
Hook = Callable[["StateSnapshot"], Optional[bool]]


@dataclass(frozen=True)
class DiscreteSpaces:
    """X_h, Y_h and Q_h of one element pair on one mesh."""

    mesh: ColumnMesh
    pair: ElementPair
    Xh: FESpace
    Yh: FESpace
    Qh: FESpace

    @classmethod
    def build(cls, mesh: ColumnMesh, pair: ElementPair = ElementPair.TAYLOR_HOOD) -> "DiscreteSpaces":
        return cls(
            mesh=mesh,
            pair=pair,
            Xh=build_velocity_space(mesh, pair.velocity_kind),
            Yh=build_vertical_space(mesh, pair.vertical_kind),
            Qh=build_pressure_space(mesh.surface),
        )

    @property
    def dof_count(self) -> int:
        return self.Xh.dof_count + self.Qh.dof_count


@dataclass
class ProblemData:
    """Forcing, surface traction and initial data; None means zero.

    ``f(points, t)`` returns (n, 2) on Ω, ``g_s(xy, t)`` returns (n, 2) on S.
    ``grad_u0`` (n, 2, 3) and ``p0`` are only needed by the Stokes-projection
    initialization.
    """

    f: Optional[TimeField] = None
    g_s: Optional[TimeField] = None
    u0: Optional[Field] = None
    grad_u0: Optional[Field] = None
    p0: Optional[Field] = None


@dataclass
class StateSnapshot:
    """Discrete state at time node m."""

    m: int
    t: float
    u: DiscreteField
    u3: VerticalEvaluator
    p: DiscreteField
    u_half: Optional[DiscreteField] = None
    energy: EnergyRecord = field(default_factory=EnergyRecord)
    stats: Dict[str, SolveStats] = field(default_factory=dict)


@dataclass
class History:
    """Snapshots (all or only the last) and the per-step ledger."""

    config: SchemeConfig
    states: List[StateSnapshot] = field(default_factory=list)
    ledger: List[Dict[str, float]] = field(default_factory=list)

    @property
    def final(self) -> StateSnapshot:
        return self.states[-1]


@dataclass(frozen=True)
class StepOperators:
    """Time-independent matrices shared by the sub-steps and the ledger."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    B: sp.csr_matrix
    Bc: sp.csr_matrix
    MS: sp.csr_matrix
    M_scalar: sp.csr_matrix
    K_scalar: sp.csr_matrix

    @classmethod
    def build(cls, spaces: DiscreteSpaces, f_cor: float = 0.0, workers: int = 1) -> "StepOperators":
        Xh = spaces.Xh
        scalar = _scalar_view(Xh)
        M_scalar = assemble_mass(scalar, workers)
        K_scalar = assemble_stiffness(scalar, workers)
        return cls(
            M=sp.block_diag([M_scalar, M_scalar], format="csr"),
            K=sp.block_diag([K_scalar, K_scalar], format="csr"),
            B=assemble_divergence(spaces.Qh, Xh, workers),
            Bc=assemble_coriolis(Xh, f_cor, workers),
            MS=assemble_surface_mass(spaces.Qh, workers),
            M_scalar=M_scalar,
            K_scalar=K_scalar,
        )


def energy_record(
    before: np.ndarray,
    u_half: np.ndarray,
    after: np.ndarray,
    k: float,
    nu: float,
    ops: StepOperators,
    load: Optional[np.ndarray] = None,
    coriolis: CoriolisMode = CoriolisMode.NONE,
) -> EnergyRecord:
    """Terms of the per-step energy identity and its residual |LHS − RHS|."""
    M, K = ops.M, ops.K
    kinetic_gap = (after @ (M @ after)) - (before @ (M @ before))
    numerical = mass_norm(M, u_half - before) ** 2 + mass_norm(M, after - u_half) ** 2
    dissipation = k * nu * (
        mass_norm(K, u_half) ** 2 + mass_norm(K, after) ** 2 + mass_norm(K, after - u_half) ** 2
    )
    work = 2.0 * k * float(load @ u_half) if load is not None else 0.0
    cor = 0.0
    if coriolis is not CoriolisMode.NONE:
        forced = ops.Bc @ before
        cor = -2.0 * k * float(u_half @ forced)
        if coriolis is CoriolisMode.CORRECTION:
            cor += 2.0 * k * float(after @ forced)
    residual = abs(kinetic_gap + numerical + dissipation - work - cor)
    return EnergyRecord(
        kinetic=0.5 * float(after @ (M @ after)),
        dissipation=dissipation,
        numerical_dissipation=numerical,
        work=work,
        coriolis_work=cor,
        residual=residual,
    )


def energy_identity_residual(
    before: DiscreteField,
    u_half: DiscreteField,
    after: DiscreteField,
    k: float,
    ops: StepOperators,
    nu: float = 1.0,
    load: Optional[np.ndarray] = None,
    coriolis: CoriolisMode = CoriolisMode.NONE,
) -> float:
    """|LHS − RHS| of the discrete energy identity of one step."""
    return energy_record(
        before.coefficients, u_half.coefficients, after.coefficients, k, nu, ops, load, coriolis
    ).residual


class Stepper:
    """Holds the operators of a run and advances states one step at a time."""

    def __init__(
        self,
        cfg: SchemeConfig,
        spaces: DiscreteSpaces,
        data: Optional[ProblemData] = None,
        workers: int = 1,
    ):
        if cfg.coriolis is CoriolisMode.CORRECTION and (
            cfg.substep2.method is not SolverMethod.MONOLITHIC_DIRECT
        ):
            raise ValidationError("Coriolis correction needs the monolithic Sub-step 2 solver")
        self.cfg = cfg
        self.spaces = spaces
        self.data = data or ProblemData()
        self.workers = workers
        self.ops = StepOperators.build(spaces, cfg.f_cor, workers)
        self.vertical = (
            VerticalSolver(spaces.Yh, spaces.Xh, cfg.substep0, workers)
            if cfg.variant is Variant.R
            else None
        )
        k, nu = cfg.k, cfg.nu
        self._A2 = self.ops.M / k + nu * self.ops.K
        A2 = self._A2
        if cfg.coriolis is CoriolisMode.CORRECTION:
            A2 = A2 + self.ops.Bc
        self.saddle = SaddleSolver(A2, self.ops.B, spaces.Xh, spaces.Qh, cfg.substep2)

    # -- pieces ---------------------------------------------------------

    def _evaluator(self, u: DiscreteField) -> VerticalEvaluator:
        return build_evaluator(self.cfg.variant, u, self.vertical)

    def forcing(self, t: float) -> np.ndarray:
        """⟨f^{m+1}, v_h⟩ + ⟨g_s^{m+1}, v_h⟩_{Γ_s} for the node t = t_{m+1}."""
        Xh, cfg = self.spaces.Xh, self.cfg
        out = np.zeros(Xh.dof_count)
        if self.data.f is not None:
            out += assemble_load(
                Xh, self.data.f, t, cfg.data_sampling, cfg.k, cfg.averaging_points, self.workers
            )
        if self.data.g_s is not None:
            out += assemble_traction(Xh, self.data.g_s, t, cfg.data_sampling, cfg.k, cfg.averaging_points)
        out[Xh.dirichlet_mask] = 0.0
        return out

    def initialize(self) -> StateSnapshot:
        """State at m = 0 in the configured initialization mode."""
        Xh, Qh = self.spaces.Xh, self.spaces.Qh
        p = DiscreteField.zeros(Qh)
        if self.data.u0 is None:
            u = DiscreteField.zeros(Xh)
        elif self.cfg.init is InitMode.INTERPOLATION:
            u = apply_mask(interpolate(Xh, self.data.u0))
        elif self.cfg.init is InitMode.L2_PROJECTION:
            mask = Xh.dirichlet_mask
            rhs = np.where(mask, 0.0, assemble_source(Xh, self.data.u0, self.workers))
            coeffs = spla.splu(apply_dirichlet(self.ops.M, mask).tocsc()).solve(rhs)
            u = DiscreteField(Xh, coeffs)
        else:
            if self.data.grad_u0 is None:
                raise ValidationError("Stokes-projection initialization needs grad_u0")
            u, p = stokes_projector(
                Xh, Qh, grad_v=self.data.grad_u0, q=self.data.p0, cfg=self.cfg.substep0, workers=self.workers
            )
        return StateSnapshot(m=0, t=0.0, u=u, u3=self._evaluator(u), p=p)

    def substep1(self, state: StateSnapshot, t_next: float) -> Tuple[DiscreteField, SolveStats, np.ndarray]:
        """Convection-diffusion step; returns u^{m+1/2}, stats and the load used."""
        cfg, Xh, ops = self.cfg, self.spaces.Xh, self.ops
        n = Xh.scalar_count
        C = assemble_convection(state.u, state.u3, Xh, self.workers)[:n, :n]
        A1 = ops.M_scalar / cfg.k + C + cfg.nu * ops.K_scalar
        A1 = apply_dirichlet(A1, Xh.scalar_mask).tocsc()

        load = self.forcing(t_next)
        rhs = ops.M @ state.u.coefficients / cfg.k + load
        if cfg.coriolis is not CoriolisMode.NONE:
            rhs -= ops.Bc @ state.u.coefficients
        rhs[Xh.dirichlet_mask] = 0.0

        precond = self._preconditioner(A1, cfg.substep1)
        out = np.zeros(Xh.dof_count)
        iterations, residual = 0, 0.0
        for c in range(Xh.components):
            b = rhs[c * n : (c + 1) * n]
            if not np.any(b):
                continue
            counter = _Counter()
            x, info = spla.gmres(
                A1, b, rtol=cfg.substep1.tol, atol=0.0, restart=50,
                maxiter=cfg.substep1.max_iter, M=precond, callback=counter, callback_type="pr_norm",
            )
            res = float(np.linalg.norm(A1 @ x - b) / np.linalg.norm(b))
            if info != 0:
                raise SolverDiverged("gmres", counter.count, res)
            out[c * n : (c + 1) * n] = x
            iterations += counter.count
            residual = max(residual, res)
        return DiscreteField(Xh, out, t_next), SolveStats("gmres", iterations, residual), load

    @staticmethod
    def _preconditioner(A: sp.csc_matrix, solver: SolverConfig) -> spla.LinearOperator:
        try:
            if solver.method is SolverMethod.MONOLITHIC_DIRECT:
                factor = spla.splu(A)
            else:
                factor = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
        except RuntimeError as exc:
            raise SingularSystem(f"Sub-step 1 factorization failed: {exc}")
        return spla.LinearOperator(A.shape, matvec=factor.solve, dtype=float)

    def substep2(
        self, state: StateSnapshot, u_half: DiscreteField
    ) -> Tuple[DiscreteField, DiscreteField, SolveStats]:
        """Hydrostatic Stokes correction of u^{m+1/2}."""
        rhs = self._A2 @ u_half.coefficients
        if self.cfg.coriolis is CoriolisMode.CORRECTION:
            rhs = rhs + self.ops.Bc @ state.u.coefficients
        u, p, stats = self.saddle.solve(rhs)
        return (
            DiscreteField(self.spaces.Xh, u, u_half.time_label),
            DiscreteField(self.spaces.Qh, p, u_half.time_label),
            stats,
        )

    def advance(self, state: StateSnapshot) -> StateSnapshot:
        """One full step m → m + 1."""
        t_next = self.cfg.time(state.m + 1)
        u_half, stats1, load = self.substep1(state, t_next)
        u_new, p_new, stats2 = self.substep2(state, u_half)
        energy = energy_record(
            state.u.coefficients, u_half.coefficients, u_new.coefficients,
            self.cfg.k, self.cfg.nu, self.ops, load, self.cfg.coriolis,
        )
        return StateSnapshot(
            m=state.m + 1,
            t=t_next,
            u=u_new,
            u3=self._evaluator(u_new),
            p=p_new,
            u_half=u_half,
            energy=energy,
            stats={"substep1": stats1, "substep2": stats2},
        )

    def ledger_row(self, state: StateSnapshot) -> Dict[str, float]:
        u = state.u.coefficients
        return {
            "m": state.m,
            "t": state.t,
            "u_l2": mass_norm(self.ops.M, u),
            "u_h1": mass_norm(self.ops.K, u),
            "p_l2": mass_norm(self.ops.MS, state.p.coefficients),
            "div_norm": float(np.linalg.norm(self.saddle.B @ u)),
            "energy_residual": state.energy.residual,
        }

    def run(self, hooks: Iterable[Hook] = (), keep_states: bool = True) -> History:
        """Iterate m = 0 … M − 1, calling every hook after each state.

        Raises:
            HaltedByHook: When a hook returns False.
        """
        hooks = list(hooks)
        history = History(config=self.cfg)
        state = self.initialize()
        self._record(history, state, hooks, keep_states)
        for _ in range(self.cfg.M):
            state = self.advance(state)
            logger.debug(
                "step %d: t=%.4g |u|=%.6g residual=%.3e",
                state.m, state.t, np.sqrt(2.0 * state.energy.kinetic), state.energy.residual,
            )
            self._record(history, state, hooks, keep_states)
        logger.info("run finished: %d step(s), k=%.4g", self.cfg.M, self.cfg.k)
        return history

    def _record(self, history: History, state: StateSnapshot, hooks: List[Hook], keep: bool) -> None:
        if keep or not history.states:
            history.states.append(state)
        else:
            history.states[-1] = state
        history.ledger.append(self.ledger_row(state))
        for hook in hooks:
            if hook(state) is False:
                raise HaltedByHook(state.m, getattr(hook, "__name__", type(hook).__name__))


class _Counter:
    def __init__(self):
        self.count = 0

    def __call__(self, _: Any) -> None:
        self.count += 1


def run(
    cfg: SchemeConfig,
    spaces: DiscreteSpaces,
    data: Optional[ProblemData] = None,
    hooks: Iterable[Hook] = (),
    keep_states: bool = True,
    workers: int = 1,
) -> History:
    """Build a Stepper and run it to t = T."""
    return Stepper(cfg, spaces, data, workers).run(hooks, keep_states)


class LedgerWriter:
    """Hook appending one ledger row per state to a CSV file."""

    def __init__(self, stepper: Stepper, path):
        self.stepper = stepper
        self.table = CsvTable(path, LEDGER_COLUMNS)

    def __call__(self, state: StateSnapshot) -> None:
        self.table.write(self.stepper.ledger_row(state))

    def close(self) -> None:
        self.table.close()


class CheckpointWriter:
    """Hook dumping (u, p) every ``every`` steps (never when 0)."""

    def __init__(self, directory, every: int):
        self.directory = directory
        self.every = every
        self.written: List[int] = []

    def __call__(self, state: StateSnapshot) -> None:
        if self.every and state.m % self.every == 0:
            write_checkpoint(self.directory, state.m, state.u, state.p)
            self.written.append(state.m)


def restore_state(stepper: Stepper, directory, m: int) -> StateSnapshot:
    """Snapshot rebuilt from a checkpoint directory written at step m."""
    u, p = read_checkpoint(directory, stepper.spaces.Xh, stepper.spaces.Qh)
    return StateSnapshot(m=m, t=stepper.cfg.time(m), u=u, u3=stepper._evaluator(u), p=p)
