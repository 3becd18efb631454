"""
Tests for the viscosity-splitting time loop.
"""

import csv

import numpy as np
import pytest

from hydrosplit.exceptions import HaltedByHook, ValidationError
from hydrosplit.fe_spaces import DiscreteField, apply_mask, field_mean
from hydrosplit.models import (
    CoriolisMode,
    DataSampling,
    InitMode,
    SchemeConfig,
    SolverConfig,
    SolverMethod,
    Variant,
)
from hydrosplit.stepper import (
    CheckpointWriter,
    LedgerWriter,
    ProblemData,
    Stepper,
    energy_identity_residual,
    restore_state,
    run,
)
from hydrosplit.utils import mass_norm
from hydrosplit.vertical_velocity import build_evaluator


def _forcing():
    return ProblemData(
        f=lambda p, t: np.column_stack([np.sin(np.pi * p[:, 1]) * (1 + t), p[:, 2] * np.cos(t)]),
        g_s=lambda xy, t: np.column_stack([xy[:, 0] * (1 - xy[:, 0]), np.zeros(len(xy))]),
        u0=lambda p: np.column_stack(
            [np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * (p[:, 2] + 0.5), np.zeros(len(p))]
        ),
    )


def _random_state(stepper, rng):
    state = stepper.initialize()
    Xh = stepper.spaces.Xh
    state.u = apply_mask(DiscreteField(Xh, rng.standard_normal(Xh.dof_count)))
    state.u3 = build_evaluator(stepper.cfg.variant, state.u, stepper.vertical)
    return state


class TestStability:
    """Test unconditional energy stability without forcing."""

    @pytest.mark.parametrize(
        "coriolis,f_cor",
        [(CoriolisMode.NONE, 0.0), (CoriolisMode.CORRECTION, 2.0)],
        ids=["no_coriolis", "coriolis_correction"],
    )
    @pytest.mark.parametrize("variant", [Variant.R, Variant.Q])
    @pytest.mark.parametrize("spaces", ["th_spaces", "mini_spaces"])
    @pytest.mark.parametrize("k", ["h2", 0.1, 1.0, 10.0])
    def test_kinetic_energy_decays(self, spaces, variant, k, coriolis, f_cor, request, rng):
        """Test |u^{m+1}| ≤ |u^m| for random u⁰ and f = g_s = 0."""
        sp_ = request.getfixturevalue(spaces)
        k = sp_.mesh.h ** 2 if k == "h2" else k
        cfg = SchemeConfig(variant=variant, T=3 * k, M=3, coriolis=coriolis, f_cor=f_cor)
        stepper = Stepper(cfg, sp_)
        state = _random_state(stepper, rng)
        M = stepper.ops.M
        for _ in range(3):
            before = mass_norm(M, state.u.coefficients)
            state = stepper.advance(state)
            after = mass_norm(M, state.u.coefficients)
            assert after <= before + 1e-12 * max(1.0, before)


class TestEnergyIdentity:
    """Test the per-step energy ledger."""

    @pytest.mark.parametrize("variant", [Variant.R, Variant.Q])
    def test_forced_residual(self, th_spaces, variant):
        """Test the identity holds to roundoff with body force and traction."""
        cfg = SchemeConfig(variant=variant, T=0.25, M=4, nu=0.5)
        history = run(cfg, th_spaces, _forcing())
        for state in history.states[1:]:
            scale = max(1.0, 2.0 * state.energy.kinetic)
            assert state.energy.residual <= 1e-9 * scale
            assert state.energy.work != 0.0

    def test_averaged_sampling(self, th_spaces):
        """Test the identity also holds for time-averaged data."""
        cfg = SchemeConfig(T=0.2, M=2, data_sampling=DataSampling.AVERAGED, averaging_points=3)
        history = run(cfg, th_spaces, _forcing())
        assert max(s.energy.residual for s in history.states[1:]) <= 1e-9

    @pytest.mark.parametrize("mode", [CoriolisMode.EXPLICIT, CoriolisMode.CORRECTION])
    def test_coriolis_work(self, th_spaces, mode, rng):
        """Test the Coriolis contribution is accounted for in both modes."""
        stepper = Stepper(SchemeConfig(T=0.5, M=2, f_cor=2.0, coriolis=mode), th_spaces)
        state = _random_state(stepper, rng)
        new = stepper.advance(state)
        assert new.energy.coriolis_work != 0.0
        assert new.energy.residual <= 1e-9 * max(1.0, 2.0 * new.energy.kinetic)

    def test_standalone_residual(self, th_spaces, rng):
        """Test energy_identity_residual agrees with the step ledger."""
        stepper = Stepper(SchemeConfig(T=0.1, M=1), th_spaces)
        state = _random_state(stepper, rng)
        new = stepper.advance(state)
        res = energy_identity_residual(state.u, new.u_half, new.u, stepper.cfg.k, stepper.ops)
        assert res == pytest.approx(new.energy.residual, abs=1e-12)


class TestStepper:
    """Test sub-steps, initialization and the run loop."""

    def test_substep2_divergence_free(self, mini_spaces, rng):
        """Test u^{m+1} satisfies the discrete constraint and p has zero mean."""
        stepper = Stepper(SchemeConfig(T=0.1, M=1), mini_spaces)
        new = stepper.advance(_random_state(stepper, rng))
        assert np.abs(stepper.saddle.B @ new.u.coefficients).max() < 1e-11
        assert field_mean(new.p) == pytest.approx(0.0, abs=1e-12)
        assert new.stats["substep2"].method == "monolithic_direct"

    @pytest.mark.parametrize(
        "method", [SolverMethod.UZAWA, SolverMethod.AUGMENTED_LAGRANGIAN], ids=["uzawa", "augmented"]
    )
    def test_iterative_substep2(self, th_spaces, rng, method):
        """Test an iterative Sub-step 2 matches the monolithic one within 10·tol."""
        tol = 1e-10
        direct = Stepper(SchemeConfig(T=0.1, M=1), th_spaces)
        iterative = Stepper(
            SchemeConfig(T=0.1, M=1, substep2=SolverConfig(method=method, tol=tol, max_iter=20000)),
            th_spaces,
        )
        state = _random_state(direct, rng)
        u_half, _, _ = direct.substep1(state, 0.1)
        u0, p0, _ = direct.substep2(state, u_half)
        u1, p1, _ = iterative.substep2(state, u_half)
        for a, b in ((u0, u1), (p0, p1)):
            gap = np.linalg.norm(a.coefficients - b.coefficients)
            assert gap <= 10 * tol * max(1.0, np.linalg.norm(a.coefficients))
        assert np.linalg.norm(direct.ops.B @ u1.coefficients) <= 10 * tol * max(
            1.0, np.linalg.norm(u1.coefficients)
        )

    def test_iterative_substep1(self, th_spaces, rng):
        """Test the ILU-preconditioned Sub-step 1 matches the LU-preconditioned one."""
        tol = 1e-12
        direct = Stepper(SchemeConfig(T=0.1, M=1), th_spaces)
        iterative = Stepper(
            SchemeConfig(T=0.1, M=1, substep1=SolverConfig(method=SolverMethod.UZAWA, tol=tol)),
            th_spaces,
        )
        state = _random_state(direct, rng)
        a, _, _ = direct.substep1(state, 0.1)
        b, stats, _ = iterative.substep1(state, 0.1)
        assert stats.residual_u <= 10 * tol
        # GMRES stops on the residual, so the error also carries the conditioning of A1
        gap = np.linalg.norm(a.coefficients - b.coefficients)
        assert gap <= 1e4 * tol * max(1.0, np.linalg.norm(a.coefficients))

    def test_correction_needs_direct(self, th_spaces):
        """Test the Coriolis correction is refused with an iterative Sub-step 2."""
        cfg = SchemeConfig(
            coriolis=CoriolisMode.CORRECTION,
            f_cor=1.0,
            substep2=SolverConfig(method=SolverMethod.UZAWA),
        )
        with pytest.raises(ValidationError):
            Stepper(cfg, th_spaces)

    def test_zero_data_stays_zero(self, th_spaces):
        """Test zero data gives the zero solution."""
        history = run(SchemeConfig(T=0.1, M=2), th_spaces)
        assert not history.final.u.coefficients.any()
        assert history.final.t == pytest.approx(0.1)

    @pytest.mark.parametrize("init", list(InitMode))
    def test_initialization_modes(self, th_spaces, init):
        """Test every initialization gives a masked u⁰ close to the data."""
        data = _forcing()
        if init is InitMode.STOKES_PROJECTION:
            data.grad_u0 = lambda p: np.zeros((len(p), 2, 3))
        stepper = Stepper(SchemeConfig(init=init), th_spaces, data)
        state = stepper.initialize()
        assert not state.u.coefficients[th_spaces.Xh.dirichlet_mask].any()
        assert state.m == 0 and state.t == 0.0

    def test_stokes_init_needs_gradient(self, th_spaces):
        """Test the Stokes-projection initialization requires grad_u0."""
        stepper = Stepper(SchemeConfig(init=InitMode.STOKES_PROJECTION), th_spaces, _forcing())
        with pytest.raises(ValidationError):
            stepper.initialize()

    def test_keep_states(self, th_spaces):
        """Test keep_states=False retains only the last snapshot but every ledger row."""
        cfg = SchemeConfig(T=0.2, M=4)
        history = run(cfg, th_spaces, _forcing(), keep_states=False)
        assert len(history.states) == 1 and history.final.m == 4
        assert [row["m"] for row in history.ledger] == [0, 1, 2, 3, 4]

    def test_hook_halts(self, th_spaces):
        """Test a hook returning False stops the loop."""

        def stop_at_two(state):
            return state.m < 2

        with pytest.raises(HaltedByHook) as exc_info:
            run(SchemeConfig(T=0.5, M=8), th_spaces, _forcing(), hooks=[stop_at_two])
        assert exc_info.value.step == 2
        assert exc_info.value.hook == "stop_at_two"

    def test_hooks_called_per_state(self, th_spaces, mocker):
        """Test hooks see m = 0 … M in order."""
        hook = mocker.Mock(return_value=None)
        run(SchemeConfig(T=0.2, M=3), th_spaces, hooks=[hook])
        assert [c.args[0].m for c in hook.call_args_list] == [0, 1, 2, 3]


class TestWriters:
    """Test the ledger and checkpoint hooks."""

    def test_ledger_csv(self, th_spaces, tmp_path):
        """Test one CSV row per state with the ledger columns."""
        stepper = Stepper(SchemeConfig(T=0.2, M=2), th_spaces, _forcing())
        writer = LedgerWriter(stepper, tmp_path / "ledger.csv")
        try:
            stepper.run(hooks=[writer])
        finally:
            writer.close()
        with open(tmp_path / "ledger.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["m"] for r in rows] == ["0", "1", "2"]
        assert set(rows[0]) == {"m", "t", "u_l2", "u_h1", "p_l2", "div_norm", "energy_residual"}

    def test_checkpoint_restart(self, th_spaces, tmp_path):
        """Test a restored checkpoint continues to the same state."""
        stepper = Stepper(SchemeConfig(T=0.4, M=4), th_spaces, _forcing())
        checkpoints = CheckpointWriter(tmp_path, every=2)
        history = stepper.run(hooks=[checkpoints])
        assert checkpoints.written == [0, 2, 4]
        restored = restore_state(stepper, tmp_path / "step_000002", 2)
        assert restored.t == pytest.approx(0.2)
        resumed = stepper.advance(stepper.advance(restored))
        np.testing.assert_array_equal(resumed.u.coefficients, history.final.u.coefficients)

    def test_checkpoint_disabled(self, th_spaces, tmp_path):
        """Test every = 0 writes nothing."""
        checkpoints = CheckpointWriter(tmp_path, every=0)
        run(SchemeConfig(T=0.1, M=2), th_spaces, hooks=[checkpoints])
        assert checkpoints.written == [] and not any(tmp_path.iterdir())
