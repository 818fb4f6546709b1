import numpy as np
import pytest
import scipy.linalg

from llelab.bloch import (
    apply_semigroup_periodic,
    apply_sp_and_s2,
    assemble_bloch,
    bloch_inverse,
    bloch_matrix,
    bloch_propagator,
    bloch_transform,
    constant_profile,
    full_line_matrix,
    projection_pi0,
    verify_assumptions,
    zero_mode_data,
)
from llelab.errors import SpectralAssumptionError
from llelab.spectral import PeriodicGrid, RealPairField, norm
from llelab.waves import WaveParameters, homogeneous_states
from tests.conftest import build_demo_wave


def constant_block_eigs(params, rho, k):
    """Closed-form 2x2 dispersion about a constant state at wavenumber k."""
    u = params.forcing / (1.0 + 1j * (params.alpha - rho)) if params.forcing else 0j
    a, b = u.real, u.imag
    m = params.beta * k**2 - params.alpha + rho
    S = np.array([[m + 2 * a * a, 2 * a * b], [2 * a * b, m + 2 * b * b]])
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    return np.linalg.eigvals(J @ S - np.eye(2))


def match_multisets(a, b):
    """Max pairing distance between equal-size complex multisets."""
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c].max()


@pytest.fixture(scope="module")
def spectrum_report(demo_wave):
    return verify_assumptions(demo_wave, xi_count=32)


class TestAssembly:
    def test_zero_profile_closed_form(self):
        # diagnostic phi=0: eigenvalues -1 +- i(beta q^2 - alpha) per mode
        params = WaveParameters(alpha=0.7, beta=1, forcing=0.0, period=2 * np.pi)
        prof = constant_profile(params, 0j, 32)
        L = assemble_bloch(prof, 0.0)
        lam = np.linalg.eigvals(L.matrix)
        g = prof.grid()
        expected = []
        for q in g.wavenumbers:
            val = params.beta * q**2 - params.alpha
            expected.extend([-1 + 1j * val, -1 - 1j * val])
        assert match_multisets(lam, np.array(expected)) <= 1e-10

    def test_constant_state_dispersion(self):
        params = WaveParameters(alpha=1.0, beta=-1, forcing=1.1, period=2 * np.pi)
        u = homogeneous_states(params)[-1]
        rho = abs(u) ** 2
        prof = constant_profile(params, u, 32)
        for xi in (0.0, 0.21, -0.37):
            L = assemble_bloch(prof, xi)
            lam = np.linalg.eigvals(L.matrix)
            q = prof.grid().wavenumbers.copy()
            if xi < 0:
                q[len(q) // 2] *= -1
            expected = np.concatenate(
                [constant_block_eigs(params, rho, qq + xi) for qq in q]
            )
            assert match_multisets(lam, expected) <= 1e-8

    def test_kernel_contains_translation_mode(self, demo_wave):
        L = assemble_bloch(demo_wave, 0.0)
        pp = demo_wave.derivative.data.ravel()
        resid = np.linalg.norm(L.matrix @ pp) / np.linalg.norm(pp)
        assert resid <= 1e-8
        lam, vr = scipy.linalg.eig(L.matrix)
        idx = int(np.argmin(np.abs(lam)))
        assert abs(lam[idx]) <= 1e-8
        v = vr[:, idx]
        cosine = abs(np.vdot(v, pp)) / (np.linalg.norm(v) * np.linalg.norm(pp))
        assert cosine >= 1 - 1e-6

    def test_xi_range_enforced(self, demo_wave):
        with pytest.raises(ValueError):
            assemble_bloch(demo_wave, 10.0)


class TestVerifyAssumptions:
    def test_demo_wave_is_diffusively_stable(self, spectrum_report):
        rep = spectrum_report
        assert rep.d1_ok and rep.d2_ok and rep.d3_ok
        assert rep.theta_fit > 0
        assert rep.gap_delta0 > 0
        assert rep.cutoff_xi0 > 0

    def test_mi_constant_state_fails_d1(self):
        params = WaveParameters(alpha=1.0, beta=-1, forcing=1.1, period=2 * np.pi)
        u = homogeneous_states(params)[-1]
        assert abs(u) ** 2 > 1.0  # inside the MI band
        prof = constant_profile(params, u, 32)
        rep = verify_assumptions(prof, xi_count=16)
        assert not rep.d1_ok
        assert rep.d1_witness is not None
        assert rep.d1_witness.real > 0

    def test_critical_curve_origin(self, spectrum_report):
        rep = spectrum_report
        i0 = int(np.argmin(np.abs(rep.critical_xi)))
        assert abs(rep.critical_curve[i0]) <= 1e-8
        # centered finite difference of the tracked curve at xi=0
        dxi = rep.critical_xi[i0 + 1] - rep.critical_xi[i0]
        deriv = (rep.critical_curve[i0 + 1] - rep.critical_curve[i0 - 1]) / (2 * dxi)
        assert abs(deriv.real) <= 1e-6

    def test_rejects_tiny_grids(self, demo_wave):
        with pytest.raises(ValueError):
            verify_assumptions(demo_wave, xi_count=8)


class TestProjection:
    def test_normalization(self, demo_wave):
        zm = zero_mode_data(demo_wave)
        assert abs(zm.normalization_check - 1.0) <= 1e-10
        L0 = bloch_matrix(demo_wave.profile, demo_wave.params, 0.0).real
        res = np.linalg.norm(L0.T @ zm.adjoint_mode.data.ravel())
        assert res <= 1e-8 * np.linalg.norm(zm.adjoint_mode.data)

    def test_projects_phi_prime_to_itself(self, demo_wave):
        zm = zero_mode_data(demo_wave)
        out = projection_pi0(zm, demo_wave.derivative)
        assert np.abs(out.data - demo_wave.derivative.data).max() <= 1e-10 * max(
            1.0, np.abs(demo_wave.derivative.data).max()
        )

    def test_orthogonal_input_maps_to_zero(self, demo_wave):
        zm = zero_mode_data(demo_wave)
        g = RealPairField(
            demo_wave.grid(),
            np.sin(3 * demo_wave.grid().x) * np.ones((2, 1)),
        )
        coeff = demo_wave.grid().spacing * float(
            zm.adjoint_mode.data.ravel() @ g.data.ravel()
        )
        g_orth = RealPairField(g.grid, g.data - coeff * zm.phi_prime.data / 1.0)
        # orthogonalize exactly: subtract projection
        g_orth = g - projection_pi0(zm, g)
        out = projection_pi0(zm, g_orth)
        assert np.abs(out.data).max() <= 1e-10

    def test_idempotent(self, demo_wave):
        zm = zero_mode_data(demo_wave)
        rng = np.random.default_rng(0)
        g = RealPairField(demo_wave.grid(), rng.normal(size=(2, demo_wave.grid().num_points)))
        once = projection_pi0(zm, g)
        twice = projection_pi0(zm, once)
        assert np.abs(twice.data - once.data).max() <= 1e-10 * max(
            1.0, np.abs(once.data).max()
        )


class TestPeriodicSemigroup:
    def test_identity_at_t0(self, demo_wave):
        zm = zero_mode_data(demo_wave)
        rng = np.random.default_rng(1)
        g = RealPairField(demo_wave.grid(), rng.normal(size=(2, demo_wave.grid().num_points)))
        out = apply_semigroup_periodic(demo_wave, zm, g, 0.0, subtract_projection=True)
        assert np.abs(out.data - g.data).max() <= 1e-9 * np.abs(g.data).max()

    def test_s1_kills_translation_mode(self, demo_wave, spectrum_report):
        zm = zero_mode_data(demo_wave)
        t = 2.0 + 20.0 / spectrum_report.gap_delta0
        out = apply_semigroup_periodic(demo_wave, zm, demo_wave.derivative, t, True)
        assert norm(out, "L2") <= 1e-8 * norm(demo_wave.derivative, "L2")

    def test_s1_decay_rate_matches_gap(self, demo_wave, spectrum_report):
        zm = zero_mode_data(demo_wave)
        rng = np.random.default_rng(2)
        g = RealPairField(demo_wave.grid(), rng.normal(size=(2, demo_wave.grid().num_points)))
        times = np.linspace(3.0, 18.0, 16)
        vals = [
            norm(apply_semigroup_periodic(demo_wave, zm, g, t, True), "L2") for t in times
        ]
        rate = -np.polyfit(times, np.log(vals), 1)[0]
        assert rate == pytest.approx(spectrum_report.gap_delta0, rel=0.15)

    def test_semigroup_property(self, demo_wave):
        zm = zero_mode_data(demo_wave)
        rng = np.random.default_rng(3)
        g = RealPairField(demo_wave.grid(), rng.normal(size=(2, demo_wave.grid().num_points)))
        for t, s in ((1.0, 2.5), (0.5, 4.5)):
            ab = apply_semigroup_periodic(demo_wave, zm, g, t + s)
            a_then_b = apply_semigroup_periodic(
                demo_wave, zm, apply_semigroup_periodic(demo_wave, zm, g, s), t
            )
            assert norm(ab - a_then_b, "L2") <= 1e-8 * norm(g, "L2")


def localized_bump(full_grid, width=2.0, amp=1.0):
    # generic data: off-center (no accidental symmetry pairing with the wave)
    # and present in both components
    x = full_grid.x
    c = 0.472 * full_grid.length
    data = np.zeros((2, full_grid.num_points))
    data[0] = amp * np.exp(-((x - c) ** 2) / (2 * width**2))
    data[1] = 0.6 * amp * np.exp(-((x - c - 0.31 * width) ** 2) / (2 * width**2))
    return RealPairField(full_grid, data)


class TestBlochTransform:
    def test_roundtrip(self, small_wave):
        M = 8
        full = PeriodicGrid(small_wave.grid().num_points * M, small_wave.params.period, M)
        rng = np.random.default_rng(4)
        g = RealPairField(full, rng.normal(size=(2, full.num_points)))
        ghat = bloch_transform(g)
        back = bloch_inverse(full, ghat)
        assert np.abs(back.data - g.data).max() <= 1e-12 * np.abs(g.data).max()

    def test_operator_block_diagonalization(self, small_wave):
        # applying L0 on the full domain equals per-frequency Bloch action
        M = 4
        wave = build_demo_wave(num_points=32)
        full = PeriodicGrid(32 * M, wave.params.period, M)
        rng = np.random.default_rng(5)
        g = RealPairField(full, rng.normal(size=(2, full.num_points)))
        Lfull = full_line_matrix(wave, M)
        direct = Lfull @ g.data.ravel()
        ghat = bloch_transform(g)
        out = np.empty_like(ghat)
        xi = 2 * np.pi * np.fft.fftfreq(M, d=wave.params.period)
        for m in range(M):
            Lm = bloch_matrix(wave.profile, wave.params, xi[m])
            out[m] = (Lm @ ghat[m].ravel()).reshape(2, -1)
        recombined = bloch_inverse(full, out)
        assert np.abs(recombined.data.ravel() - direct).max() <= 1e-9


class TestUnionProperty:
    def test_union_small(self):
        wave = build_demo_wave(num_points=32)
        M = 4
        lam_full = np.linalg.eigvals(full_line_matrix(wave, M))
        xi = 2 * np.pi * np.fft.fftfreq(M, d=wave.params.period)
        lam_union = np.concatenate(
            [
                np.linalg.eigvals(bloch_matrix(wave.profile, wave.params, x))
                for x in xi
            ]
        )
        assert match_multisets(lam_full, lam_union) <= 1e-6


class TestCriticalSplit:
    @pytest.fixture(scope="class")
    def setup(self):
        wave = build_demo_wave(num_points=64)
        report = verify_assumptions(wave, xi_count=32)
        assert report.all_ok
        M = 16
        full = PeriodicGrid(64 * M, wave.params.period, M)
        return wave, report, full

    def test_refuses_without_verified_report(self, setup):
        wave, report, full = setup
        bad = verify_assumptions(
            constant_profile(
                WaveParameters(1.0, -1, 1.1, 2 * np.pi),
                homogeneous_states(WaveParameters(1.0, -1, 1.1, 2 * np.pi))[-1],
                64,
            ),
            xi_count=16,
        )
        g = localized_bump(full)
        with pytest.raises(SpectralAssumptionError):
            apply_sp_and_s2(wave, bad, g, 1.0)

    def test_sp_zero_before_cutoff_and_expm_oracle(self, setup):
        wave, report, full = setup
        g = localized_bump(full, width=1.5)
        t = 0.5
        sp, remainder = apply_sp_and_s2(wave, report, g, t)
        assert np.abs(sp).max() == 0.0
        # independent oracle: dense matrix exponential at reduced size
        small_wave = build_demo_wave(num_points=32)
        small_rep = verify_assumptions(small_wave, xi_count=16)
        M = 6
        full_s = PeriodicGrid(32 * M, small_wave.params.period, M)
        gs = localized_bump(full_s, width=1.5)
        sp_s, rem_s = apply_sp_and_s2(small_wave, small_rep, gs, t)
        Lfull = full_line_matrix(small_wave, M)
        expm_prop = scipy.linalg.expm(Lfull * t) @ gs.data.ravel()
        assert np.abs(rem_s.data.ravel() - expm_prop).max() <= 1e-8 * max(
            1.0, np.abs(expm_prop).max()
        )

    def test_decomposition_consistency(self, setup):
        wave, report, full = setup
        g = localized_bump(full, width=1.5)
        prop = bloch_propagator(wave, full.num_cells, report.cutoff_xi0, keep_full=True)
        for t in (0.5, 3.0, 8.0):
            sp, rem = apply_sp_and_s2(wave, report, g, t)
            total = RealPairField(
                full, rem.data + prop.phi_prime_full.data * sp
            )
            direct = prop.apply_full(g, t)
            scale = max(np.abs(direct.data).max(), 1e-30)
            assert np.abs(total.data - direct.data).max() <= 1e-8 * scale

    def test_sp_derivative_l2_envelope(self, setup):
        # the L2->L2 envelope of dx s_p(t): per Bloch block the norm is
        # |xi| rho e^{Re lam t} ||Phi~|| sqrt(T); decays like (1+t)^{-1/2}
        from llelab.diagnostics import fit_decay

        wave, report, full = setup
        prop = bloch_propagator(wave, full.num_cells, report.cutoff_xi0)
        T = wave.params.period
        h = wave.grid().spacing
        times = np.geomspace(1.5, 30.0, 16)
        vals = []
        for t in times:
            best = 0.0
            for m, (lam, _r, l, rho) in prop.band.items():
                xi = prop.xi_values[m]
                ltwo = np.sqrt(h * (np.abs(l) ** 2).sum())
                best = max(best, abs(xi) * rho * np.exp(lam.real * t) * ltwo * np.sqrt(T))
            vals.append(best)
        rep = fit_decay(times, np.array(vals), model="algebraic")
        assert 0.35 <= rep.exponent <= 0.65

    def test_sp_derivative_localized_bump_rate(self, setup):
        # a fixed localized bump is L1 data: the faster (1+t)^{-1/4-l/2} = -3/4
        # envelope governs its trajectory
        from llelab.diagnostics import fit_decay

        wave, report, full = setup
        prop = bloch_propagator(wave, full.num_cells, report.cutoff_xi0)
        g = localized_bump(full, width=1.0)
        coeffs = prop.sp_coefficients(g)
        h = full.spacing
        times = np.geomspace(4.0, 50.0, 14)
        vals = []
        for t in times:
            field = prop.sp_field(coeffs, t, space_order=1)
            vals.append(float(np.sqrt(h * (field**2).sum())))
        rep = fit_decay(times, np.array(vals), model="algebraic")
        assert 0.55 <= rep.exponent <= 1.05
        assert rep.r_squared >= 0.97

    def test_s2_l2_decay(self, setup):
        from llelab.diagnostics import fit_decay

        wave, report, full = setup
        prop = bloch_propagator(wave, full.num_cells, report.cutoff_xi0, keep_full=True)
        g = localized_bump(full, width=1.0)
        times = np.geomspace(2.0, 30.0, 12)
        vals = [norm(prop.apply_s2(g, t), "L2") for t in times]
        rep = fit_decay(times, np.array(vals), model="algebraic")
        assert -rep.exponent <= -0.35
