import numpy as np
import pytest

from llelab.waves import WaveParameters, continuation, newton_wave, turing_guess

# shipped demo parameters: anomalous dispersion, detuning inside the stable
# Turing window, forcing a little above the pattern-forming onset
DEMO_PARAMS = WaveParameters(alpha=1.0, beta=-1, forcing=1.1, period=2 * np.pi)
DEMO_POINTS = 256


def build_demo_wave(num_points=DEMO_POINTS, forcing=DEMO_PARAMS.forcing):
    onset = WaveParameters(DEMO_PARAMS.alpha, DEMO_PARAMS.beta, 1.02, DEMO_PARAMS.period)
    seed = turing_guess(onset, num_points, amplitude=0.2)
    wave = newton_wave(seed, onset)
    if forcing != onset.forcing:
        wave = continuation(wave, forcing, steps=4)
    return wave


@pytest.fixture(scope="session")
def demo_wave():
    return build_demo_wave()


@pytest.fixture(scope="session")
def small_wave():
    """Coarser profile for the time-integration heavy tests."""
    return build_demo_wave(num_points=128)


@pytest.fixture(scope="session")
def small_report(small_wave):
    from llelab.bloch import verify_assumptions

    report = verify_assumptions(small_wave, xi_count=32)
    assert report.all_ok
    return report


def run_tooth(wave, num_cells=16, amplitude=0.5, t_end=60.0, dt=1e-2, stride=20):
    """Shared tooth run used by the modulation / diagnostics tests."""
    from llelab.evolution import ToothPerturbation, evolve, make_tooth_data
    from llelab.spectral import RealPairField

    tooth = ToothPerturbation(
        RealPairField.zeros(wave.grid()),
        knocked_out_cells=frozenset({num_cells // 2}),
        smoothing_width=wave.params.period / 8,
        amplitude=amplitude,
    )
    data = make_tooth_data(wave, tooth, num_cells=num_cells)
    return evolve(wave, data, t_end=t_end, snapshot_stride=stride, dt=dt)


@pytest.fixture(scope="session")
def tooth_traj_small(small_wave):
    return run_tooth(small_wave)


@pytest.fixture(scope="session")
def modulation_small(small_wave, small_report, tooth_traj_small):
    """sigma + gamma tracks for the shared small tooth run."""
    from llelab.modulation import build_modulation_track

    return build_modulation_track(tooth_traj_small, small_wave, small_report)
