import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from isbsim.core import Direction, DomainError, DriveParams, ModeConfiguration
from isbsim.spinmodel import (QuantumState, SpinSystem, build_hamiltonian, collective_spectrum,
                              evolve, excitation_fraction, ground_state_system, interaction_hamiltonian,
                              lineshape_exact, lineshape_sidebands, rabi_frequency_mode,
                              rabi_kernel, refine_peak, sideband_peaks, total_spin_squared)

TWO_PI = 2 * math.pi
RABI = TWO_PI * 5.0
U = TWO_PI * 2800.0


def pair(rabi1, rabi2, u, detuning=0.0):
    return SpinSystem((1, 0), [rabi1, rabi2], [[0, u], [u, 0]], detuning)


def test_rabi_homogeneous_limit():
    n = np.arange(50)
    assert np.all(rabi_frequency_mode(n, 0.0, RABI) == RABI)


def test_rabi_linearized_difference():
    eta = 0.07
    d = rabi_frequency_mode(7, eta, RABI, True) - rabi_frequency_mode(3, eta, RABI, True)
    assert d == pytest.approx(-RABI * eta ** 2 * 4, rel=1e-12)


def test_rabi_linearized_close_to_exact():
    n = np.arange(21)
    ex = rabi_frequency_mode(n, 0.07, RABI)
    lin = rabi_frequency_mode(n, 0.07, RABI, True)
    assert np.max(np.abs(lin / ex - 1)) < 0.01


def test_single_atom_eigenvalues():
    sys = SpinSystem((0,), [RABI], [[0.0]], detuning=3.0)
    ev = np.linalg.eigvalsh(build_hamiltonian(sys))
    half = 0.5 * math.hypot(3.0, RABI)
    assert np.allclose(ev, [-half, half])


def test_pair_interaction_spectrum():
    ev, vec = np.linalg.eigh(build_hamiltonian(pair(0.0, 0.0, U)))
    # the singlet is the only state shifted by the interaction
    assert np.allclose(np.sort(ev), [0, 0, 0, U])
    singlet = np.array([0, 1, -1, 0]) / math.sqrt(2)
    assert abs(vec[:, np.argmax(ev)] @ singlet) == pytest.approx(1.0)


def test_total_spin_conserved_for_uniform_couplings():
    u = np.full((3, 3), 0.7 * U)
    np.fill_diagonal(u, 0)
    sys = SpinSystem((2, 1, 0), [RABI] * 3, u, 11.0)
    h = build_hamiltonian(sys)
    s2 = total_spin_squared(3)
    assert np.max(np.abs(h @ s2 - s2 @ h)) < 1e-9


def test_evolve_identity_and_pi_pulse():
    h = build_hamiltonian(SpinSystem((0,), [RABI], [[0.0]]))
    psi = QuantumState.all_ground(1)
    assert np.allclose(evolve(h, psi, 0.0).amplitudes, psi.amplitudes)
    assert excitation_fraction(evolve(h, psi, math.pi / RABI)) == pytest.approx(1.0, abs=1e-12)


def test_evolve_semigroup_and_unitarity():
    sys = ground_state_system(3).with_detuning(TWO_PI * 100)
    h = build_hamiltonian(sys)
    rng = np.random.default_rng(4)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi = QuantumState(v / np.linalg.norm(v))
    t = 0.013
    once = evolve(h, psi, t)
    twice = evolve(h, evolve(h, psi, t / 2), t / 2)
    assert np.max(np.abs(once.amplitudes - twice.amplitudes)) < 1e-10
    assert np.linalg.norm(once.amplitudes) == pytest.approx(1.0, abs=1e-12)
    ref = expm(-1j * h * t) @ psi.amplitudes
    assert np.max(np.abs(once.amplitudes - ref)) < 1e-10


def test_excitation_fraction_examples():
    assert excitation_fraction(QuantumState.all_ground(3)) == 0.0
    assert excitation_fraction(QuantumState.all_excited(3)) == 1.0
    plus = np.ones(2) / math.sqrt(2)
    assert excitation_fraction(QuantumState(np.kron(plus, plus))) == pytest.approx(0.5)


def test_carrier_is_interaction_free():
    drive = DriveParams(RABI, 1.0)
    grid = TWO_PI * np.linspace(-40, 40, 161)
    ref = rabi_kernel(drive.duration, grid, RABI)
    for u in TWO_PI * np.array([1.0, 30.0, 3000.0]):
        spec = lineshape_exact(pair(RABI, RABI, u), drive, grid)
        assert np.max(np.abs(spec.excitation - ref)) < 1e-9


def test_sideband_side_and_mirror():
    sys = ground_state_system(2, u=-U)
    u_n = sys.u_matrix[0, 1]
    drive = DriveParams(RABI, 1.0)
    near = TWO_PI * np.linspace(-3, 3, 61)
    up = lineshape_exact(sys, drive, u_n + near).excitation.max()
    down = lineshape_exact(sys, drive, -u_n + near).excitation.max()
    assert up > 50 * down
    mirror = lineshape_exact(sys, drive.replace(direction=Direction.EtoG), -u_n + near)
    assert mirror.excitation.max() == pytest.approx(up, rel=1e-6)


def test_pair_collective_spectrum():
    sys = ground_state_system(2)
    cs = collective_spectrum(sys)
    assert cs.energies[0] == pytest.approx(sys.u_matrix[0, 1])
    diff = abs(sys.rabi_per_mode[0] - sys.rabi_per_mode[1]) / math.sqrt(2)
    assert abs(cs.couplings[0]) == pytest.approx(diff)


def test_uniform_drive_has_no_couplings():
    sys = SpinSystem((2, 1, 0), [RABI] * 3, ground_state_system(3).u_matrix)
    assert np.allclose(collective_spectrum(sys).couplings, 0, atol=1e-12)


def test_three_atom_energies_against_full_diagonalization():
    sys = ground_state_system(3)
    h = interaction_hamiltonian(sys)
    one_flip = [i for i in range(8) if bin(i).count("1") == 2]
    ev = np.linalg.eigvalsh(h[np.ix_(one_flip, one_flip)])
    cs = collective_spectrum(sys)
    # the symmetric member of the sector sits at zero
    assert np.allclose(np.sort(ev), np.sort(np.r_[0.0, cs.energies]), atol=1e-8)


@given(st.permutations([0, 1, 2]))
@settings(max_examples=6, deadline=None)
def test_collective_spectrum_permutation_invariant(perm):
    base = ground_state_system(3)
    p = list(perm)
    sys = SpinSystem(ModeConfiguration((5, 6, 7)), base.rabi_per_mode[p],
                     base.u_matrix[np.ix_(p, p)])
    a, b = collective_spectrum(base), collective_spectrum(sys)
    assert np.allclose(a.energies, b.energies, atol=1e-8)
    assert np.allclose(np.abs(a.couplings), np.abs(b.couplings), atol=1e-10)


def test_collective_spectrum_needs_two_atoms():
    with pytest.raises(DomainError):
        collective_spectrum(SpinSystem((0,), [RABI], [[0.0]]))


def test_kernel_on_resonance():
    t = 0.3
    assert rabi_kernel(t, 0.0, 2.0) == pytest.approx(math.sin(0.3) ** 2)
    assert rabi_kernel(math.pi / RABI, 0.0, RABI) == pytest.approx(1.0)


@pytest.mark.parametrize("n_atoms", [2, 3])
def test_sidebands_match_exact(n_atoms):
    drive = DriveParams(RABI, 1.5)
    sys = ground_state_system(n_atoms)
    cs = collective_spectrum(sys)
    grid = TWO_PI * np.arange(-4000, 4000, 0.05)
    spec = lineshape_sidebands(cs, n_atoms, drive, grid)
    peaks, heights = sideband_peaks(grid, spec.excitation, 10 * RABI, drive.duration)
    assert peaks.size == n_atoms - 1
    for x0, h0 in zip(peaks, heights):
        window = x0 + TWO_PI * np.arange(-10, 10, 0.05)
        ex = lineshape_exact(sys, drive, window).excitation
        assert abs(window[np.argmax(ex)] - x0) < RABI
        assert ex.max() == pytest.approx(h0, rel=0.2)


def test_five_atoms_four_peaks():
    drive = DriveParams(RABI, 1.5)
    cs = collective_spectrum(ground_state_system(5))
    grid = TWO_PI * np.arange(-4000, 4000, 0.05)
    spec = lineshape_sidebands(cs, 5, drive, grid)
    peaks, _ = sideband_peaks(grid, spec.excitation, 10 * RABI, drive.duration)
    assert peaks.size == 4 and np.all(peaks > 0)


def test_eta_fourth_power():
    drive = DriveParams(RABI, 1.5)
    etas = np.linspace(0.02, 0.1, 5)
    heights = []
    for eta in etas:
        sys = SpinSystem.from_modes((1, 0), eta, RABI, U)
        u_n, mean = sys.u_matrix[0, 1], sys.rabi_per_mode.mean()
        # remove the off-resonant carrier tail of the symmetric manifold
        fn = lambda d: (lineshape_exact(sys, drive, [d]).excitation[0]
                        - rabi_kernel(drive.duration, d, mean))
        heights.append(refine_peak(fn, u_n, RABI / 2)[1])
    slope = np.polyfit(np.log(etas), np.log(heights), 1)[0]
    assert abs(slope - 4.0) < 0.1
