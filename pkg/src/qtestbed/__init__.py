"""Simulator for a campus-scale quantum network testbed.

Modules, bottom-up: ``photonics`` (Jones states, spectra, WDM grid),
``network`` (fibers, topology, q-ROADM), ``sources``, ``timing``
(detectors, tags, coincidences, clocks), ``polarization`` (drift and
feedback), ``qkd``, ``entanglement``, and ``scenario``/``harness``/``cli``.
"""

__version__ = "0.1.0"
