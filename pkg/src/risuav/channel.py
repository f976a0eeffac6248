"""Channel gains, NOMA decoding order and SIC offloading rates.

Conventions
-----------
* ``q`` is a horizontal UAV position ``(x, y)``; trajectories are ``(N, 2)``.
* ``theta`` holds M phases per slot, shape ``(N, M)``; ``Phi = diag(exp(j theta))``.
* All vectors are columns, so the reflected term is ``h_iR^H Phi h_RU``, i.e.
  ``sum_m conj(h_iR[m]) exp(j theta_m) h_RU[m]``.  The product
  ``conj(h_iR[m]) h_RU[m]`` is called the cascade coefficient below.
* Orders are 0-based device indices; ``pi[k]`` is the device decoded k-th.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class ChannelDraws:
    """Small-scale fading draws for one scenario realisation.

    direct_scatter has shape (N, I) (redrawn every slot); ris_nlos has shape
    (I, M) and stays fixed because devices and RIS do not move.
    """
    direct_scatter: np.ndarray
    ris_nlos: np.ndarray
    rng_seed: int
    deterministic: bool = False


@dataclass(frozen=True)
class DecodingOrder:
    pi: np.ndarray   # pi[k]  = device decoded at position k
    psi: np.ndarray  # psi[i] = decoding position of device i


@dataclass(frozen=True)
class ChannelState:
    direct: np.ndarray          # (N, I)
    ris_uav: np.ndarray         # (N, M)
    device_ris: np.ndarray      # (I, M), static over slots
    combined: np.ndarray        # (N, I)
    cascade_magnitudes: np.ndarray  # (I, M) |h_iR[m]|

    @property
    def cascade(self) -> np.ndarray:
        """(N, I, M) cascade coefficients conj(h_iR[m]) h_RU[n, m]."""
        return np.conj(self.device_ris)[None, :, :] * self.ris_uav[:, None, :]

    @property
    def power_gains(self) -> np.ndarray:
        return np.abs(self.combined) ** 2


def _cplx_gauss(rng: np.random.Generator, shape) -> np.ndarray:
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def draw_channels(s: Scenario, seed: int) -> ChannelDraws:
    """Draw reproducible CN(0, 1) fading for every device, slot and element.

    Each device gets its own child stream for the NLoS vector, so the first
    M draws do not depend on M (growing the RIS keeps existing elements).
    """
    n_dev, n_slots, m = s.device_count, s.num_slots, s.num_elements
    if s.solver.deterministic_channel:
        return ChannelDraws(np.ones((n_slots, n_dev), complex),
                            np.zeros((n_dev, m), complex), int(seed), True)
    ss = np.random.SeedSequence(int(seed))
    direct_ss, nlos_ss = ss.spawn(2)
    g = _cplx_gauss(np.random.default_rng(direct_ss), (n_slots, n_dev))
    nlos = np.stack([_cplx_gauss(np.random.default_rng(c), (m,))
                     for c in nlos_ss.spawn(n_dev)]) if n_dev else np.zeros((0, m))
    return ChannelDraws(g, nlos.reshape(n_dev, m), int(seed), False)


# --------------------------------------------------------------------------
# distances and angles

def uav_ris_distance(q, s: Scenario) -> np.ndarray:
    q = np.asarray(q, float)
    g = s.geometry
    dh = g.uav_altitude - g.ris_height
    return np.sqrt(dh ** 2 + np.sum((q - np.asarray(g.ris_position)) ** 2, axis=-1))


def uav_device_distance(q, s: Scenario) -> np.ndarray:
    """Distances with shape ``q.shape[:-1] + (I,)``."""
    q = np.asarray(q, float)
    w = s.geometry.devices_array()
    diff = q[..., None, :] - w
    return np.sqrt(np.sum(diff ** 2, axis=-1) + s.geometry.uav_altitude ** 2)


def device_ris_distance(s: Scenario) -> np.ndarray:
    g = s.geometry
    w = g.devices_array()
    return np.sqrt(np.sum((w - np.asarray(g.ris_position)) ** 2, axis=-1) + g.ris_height ** 2)


def _steering(cosine, s: Scenario) -> np.ndarray:
    m = np.arange(s.num_elements)
    cosine = np.asarray(cosine, float)
    return np.exp(-2j * np.pi * s.radio.element_spacing_ratio * cosine[..., None] * m)


def aod_cosine(q, s: Scenario) -> np.ndarray:
    q = np.asarray(q, float)
    return (s.geometry.ris_position[0] - q[..., 0]) / uav_ris_distance(q, s)


# --------------------------------------------------------------------------
# gains

def ris_uav_gain(q, s: Scenario) -> np.ndarray:
    """RIS-to-UAV LoS vector(s); shape ``q.shape[:-1] + (M,)``."""
    d = uav_ris_distance(q, s)
    amp = np.sqrt(s.radio.ref_path_loss) / d
    return amp[..., None] * _steering(aod_cosine(q, s), s)


def direct_gain(q, device_index: int, draws: ChannelDraws, s: Scenario, slot: int = 0) -> complex:
    d = uav_device_distance(q, s)[..., device_index]
    g = draws.direct_scatter[slot, device_index]
    return np.sqrt(s.radio.ref_path_loss * d ** (-s.radio.direct_exponent)) * g


def direct_gains(traj, draws: ChannelDraws, s: Scenario) -> np.ndarray:
    """Direct links for a full trajectory, shape (N, I)."""
    d = uav_device_distance(traj, s)
    return np.sqrt(s.radio.ref_path_loss * d ** (-s.radio.direct_exponent)) * draws.direct_scatter


def device_ris_gain(device_index: int, draws: ChannelDraws, s: Scenario) -> np.ndarray:
    return device_ris_gains(draws, s)[device_index]


def device_ris_gains(draws: ChannelDraws, s: Scenario) -> np.ndarray:
    """Rician device-to-RIS vectors for all devices, shape (I, M)."""
    r = s.radio
    d = device_ris_distance(s)
    cos_aoa = (s.geometry.devices_array()[:, 0] - s.geometry.ris_position[0]) / d
    los = _steering(cos_aoa, s)
    if draws.deterministic or np.isinf(r.rician_factor):
        mix = los
    else:
        b = r.rician_factor
        mix = np.sqrt(b / (1 + b)) * los + np.sqrt(1 / (1 + b)) * draws.ris_nlos
    amp = np.sqrt(r.ref_path_loss * d ** (-r.ris_exponent))
    return amp[:, None] * mix


def combine(direct, cascade, theta) -> np.ndarray:
    """h = direct + sum_m cascade_m exp(j theta_m), broadcasting over leading axes."""
    theta = np.asarray(theta, float)
    return direct + np.sum(cascade * np.exp(1j * theta)[..., None, :], axis=-1)


def combined_gain(q, theta, device_index: int, draws: ChannelDraws, s: Scenario,
                  slot: int = 0) -> complex:
    hu = direct_gain(q, device_index, draws, s, slot)
    hr = device_ris_gain(device_index, draws, s)
    phi = np.exp(1j * np.asarray(theta, float))
    return hu + np.conj(hr) @ (phi * ris_uav_gain(q, s))


def channel_state(traj, theta, draws: ChannelDraws, s: Scenario,
                  ris_enabled: bool = True) -> ChannelState:
    """Evaluate every link along a trajectory for given phases.

    With ``ris_enabled=False`` the reflected path is removed (no-RIS baseline).
    """
    traj = np.asarray(traj, float)
    hu = direct_gains(traj, draws, s)
    hru = ris_uav_gain(traj, s)
    hir = device_ris_gains(draws, s)
    if not ris_enabled:
        hir = np.zeros_like(hir)
    casc = np.conj(hir)[None, :, :] * hru[:, None, :]
    comb = combine(hu, casc, np.asarray(theta, float))
    return ChannelState(hu, hru, hir, comb, np.abs(hir))


def alignment_phases(direct, cascade) -> np.ndarray:
    """Phases that co-phase every cascade term with the direct link."""
    ref = np.angle(direct) if np.abs(direct) > 0 else 0.0
    return np.mod(ref - np.angle(cascade), 2 * np.pi)


def coherent_magnitude_gain(q, device_index: int, draws: ChannelDraws, s: Scenario,
                            slot: int = 0) -> float:
    """|h_U| + sum_m |cascade_m|, the gain reached by perfect co-phasing."""
    d_iu = uav_device_distance(q, s)[..., device_index]
    d_ru = uav_ris_distance(q, s)
    rho = s.radio.ref_path_loss
    a = np.sqrt(rho) * np.abs(draws.direct_scatter[slot, device_index])
    b = np.sqrt(rho) * np.sum(np.abs(device_ris_gain(device_index, draws, s)))
    return float(a * d_iu ** (-s.radio.direct_exponent / 2) + b / d_ru)


# --------------------------------------------------------------------------
# NOMA

def decoding_order(gains) -> DecodingOrder:
    """Ascending-gain SIC order; equal gains keep the lower index first."""
    gains = np.asarray(gains, float)
    pi = np.argsort(gains, kind="stable")
    psi = np.empty_like(pi)
    psi[pi] = np.arange(pi.size)
    return DecodingOrder(pi, psi)


def sic_rates(powers, gains, order: DecodingOrder, bandwidth: float, noise: float) -> np.ndarray:
    rx = np.asarray(powers, float) * np.asarray(gains, float)
    ordered = rx[order.pi]
    interference = np.concatenate([[0.0], np.cumsum(ordered)[:-1]]) + noise
    r_ordered = bandwidth * np.log2(1.0 + ordered / interference)
    return r_ordered[order.psi]


def offload_rates(powers, gains, order: DecodingOrder | None, s: Scenario) -> np.ndarray:
    """Per-device SIC rates (bits/s) for one slot, indexed by device."""
    if order is None:
        order = decoding_order(gains)
    return sic_rates(powers, gains, order, s.radio.bandwidth, s.radio.noise_power)


def sum_rate(powers, gains, s: Scenario) -> float:
    """Closed form of the SIC chain sum for one slot."""
    rx = float(np.sum(np.asarray(powers) * np.asarray(gains)))
    sig2 = s.radio.noise_power
    return s.radio.bandwidth * np.log2((rx + sig2) / sig2)
