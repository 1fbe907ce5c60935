"""Closed-form calibration of the noise floor and the probe gain.

Both SNR anchors are RMS ratios of signal traces (chip encrypting) over
noise traces (chip idle). With a noise-free signal RMS ``S`` and total noise
RMS ``N`` (amplifier noise plus ADC quantization, ``lsb**2 / 12``)

    SNR = 10 log10((S**2 + N**2) / N**2)

which is solved for ``N`` (PSA sensor) or ``S`` (probe gain).
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import emcouple as em
from .chipmodel import idle_schedule
from .dsp import snr
from .device import Device

PSA_SNR_TARGET_DB = 41.0
PROBE_SNR_TARGET_DB = 14.3
CALIBRATION_SENSOR = 10


def _quantization_var(chain: em.AcquisitionChain) -> float:
    lsb = 2.0 * chain.adc_full_scale / 2**chain.adc_bits
    return lsb**2 / 12.0


def clean_rms(device: Device, emfs) -> float:
    power = [np.mean(em.amplify(e, device.chain) ** 2) for e in emfs]
    return float(np.sqrt(np.mean(power)))


def calibrate_noise_floor(
    device: Device, target_db: float = PSA_SNR_TARGET_DB, sensor: int = CALIBRATION_SENSOR, n_traces: int = 5
) -> float:
    coil = device.sensor_coil(sensor)
    s = clean_rms(device, [device.emf(coil, k) for k in range(n_traces)])
    n_total_sq = s**2 / (10 ** (target_db / 10.0) - 1.0)
    amp_var = n_total_sq - _quantization_var(device.chain)
    if amp_var <= 0:
        raise ValueError("target SNR not reachable above the quantization floor")
    return math.sqrt(amp_var) / device.chain.gain


def calibrate_probe_scale(device: Device, target_db: float = PROBE_SNR_TARGET_DB, n_traces: int = 5) -> float:
    unit = replace(device, coupling=replace(device.coupling, probe_scale=1.0))
    s_unit = clean_rms(unit, [unit.probe_emf(k) for k in range(n_traces)])
    n_total = math.sqrt((device.chain.gain * device.chain.noise_floor) ** 2 + _quantization_var(device.chain))
    s_needed = n_total * math.sqrt(10 ** (target_db / 10.0) - 1.0)
    return s_needed / s_unit


def calibrated_device(device: Device | None = None) -> Device:
    """Return ``device`` with both calibrations applied in turn."""
    device = device or Device()
    nf = calibrate_noise_floor(device)
    device = replace(device, chain=replace(device.chain, noise_floor=nf))
    scale = calibrate_probe_scale(device)
    return replace(device, coupling=replace(device.coupling, probe_scale=scale))


def idle_device(device: Device) -> Device:
    """The same chip with its clock tree and every Trojan quiet."""
    return replace(device, aes_enabled=False, enabled=frozenset(), schedule=idle_schedule())


def measured_snr(device: Device, sensors=range(16), n_traces: int = 5, probe: bool = True) -> dict:
    """SNR per sensor (int keys) and of the external probe (key ``"probe"``).

    Signal traces come from windows ``0..n-1`` of ``device``; noise traces
    from windows ``n..2n-1`` of its idle twin, so no noise sample is reused.
    """
    quiet = idle_device(device)
    sig_idx = range(n_traces)
    noise_idx = range(n_traces, 2 * n_traces)
    out: dict = {}
    for s in sensors:
        out[s] = snr(
            [device.acquire_sensor(s, k) for k in sig_idx],
            [quiet.acquire_sensor(s, k) for k in noise_idx],
        )
    if probe:
        out["probe"] = snr([device.acquire_probe(k) for k in sig_idx], [quiet.acquire_probe(k) for k in noise_idx])
    return out
