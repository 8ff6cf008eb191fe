"""Named run configurations reproducing the published figure datasets."""

from __future__ import annotations

import copy

_EPS = 2.0**-32

PRESETS: dict[str, dict] = {
    "fig2-pureloss": {
        "mode": "rate",
        "geometry": "symmetric",
        "distance_semantics": "total",
        "distance_start": 0.0,
        "distance_stop": 5.0,
        "distance_points": 51,
        "nbar": 0.0,
        "mu": "opt",
        "xi": 1.0,
    },
    "fig2-thermal": {
        "mode": "rate",
        "geometry": "symmetric",
        "distance_semantics": "total",
        "distance_start": 0.0,
        "distance_stop": 5.0,
        "distance_points": 51,
        "nbar": 0.05,
        "mu": "opt",
        "xi": 1.0,
    },
    "fig3-asymmetric": {
        "mode": "rate",
        "geometry": "asymmetric-alice,asymmetric-bob",
        "fixed_km": 0.005,
        "distance_semantics": "total",
        "distance_start": 0.01,
        "distance_stop": 150.0,
        "distance_points": 76,
        "nbar": 0.0,
        "mu": "opt",
        "xi": 1.0,
    },
    "fig5-postselect": {
        "mode": "postselect",
        "geometry": "symmetric",
        "distance_semantics": "per-link",
        "distance_start": 0.25,
        "distance_stop": 6.0,
        "distance_points": 24,
        "nbar": 0.0,
        "sigma2": "opt",
    },
    "fig6-composable": {
        "mode": "finite",
        "geometry": "asymmetric-alice,symmetric",
        "fixed_km": 0.005,
        "distance_semantics": "total",
        "distance_start": 0.5,
        "distance_stop": 30.0,
        "distance_points": 60,
        "zeta": 0.01,
        "eta_eff": 0.98,
        "u_el": 0.01,
        "xi_hat": 0.98,
        "p_ec": 0.95,
        "d_bits": 14,
        "n_total": 10**7,
        "n_bks": 1,
        "eps": _EPS,
        "pe_ratio": "opt",
        "mu": "opt",
    },
    "fig8-star": {
        "mode": "star",
        "num_users": "2,3,4,5,6,7,8,9,10",
        "distance_semantics": "per-link",
        "distance_start": 0.0,
        "distance_stop": 4.0,
        "distance_points": 41,
        "nbar": 0.0,
        "mu": "opt-distance",
    },
    "fig9-3user-ps": {
        "mode": "star",
        "num_users": "3",
        "postselect": True,
        "distance_semantics": "per-link",
        "distance_start": 0.0,
        "distance_stop": 1.0,
        "distance_points": 11,
        "nbar": 0.0,
        "sigma2": 1.0,
        "qmc_points": 2**18,
    },
}

ALIASES = {"fig6": "fig6-composable"}


def presets() -> list[str]:
    """Sorted preset names (aliases excluded)."""
    return sorted(PRESETS)


def get_preset(name: str) -> dict:
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(presets())}")
    return copy.deepcopy(PRESETS[key])
