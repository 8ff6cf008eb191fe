"""Command-line interface.

    cvmdi MODE [--config PATH] [--preset NAME] [--set KEY=VALUE ...]
               [--out PATH] [--seed N] [--threads N]

Modes: rate, sweep, finite, postselect, star, simulate, presets.
Results go to CSV (stdout when ``--out`` is absent); with ``--out`` a JSON
sidecar holding the resolved configuration is written next to it.
Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .channel import LinkParams
from .composable import PE_RATIO_GRID, FiniteSizeParams, composable_rate, optimize_pe_and_modulation
from .gaussian import UnphysicalStateError
from .kernels import GramError
from .network import (
    StarConfig,
    conference_rate,
    optimize_for_max_distance,
    symmetric_links,
    three_user_postselected_rate,
)
from .postselect import IntegrationError, PsConfig, optimize_sigma2, postselected_rate
from .presets import get_preset, presets
from .protocol import (
    MdiConfig,
    asymptotic_rate,
    maximize_over_log_modulation,
    mutual_information_ab,
    optimize_modulation,
)
from .simulate import (
    empirical_key_entropy,
    empirical_mutual_information,
    estimate_channel,
    simulate_rounds,
    write_dump,
)

MODES = ("rate", "sweep", "finite", "postselect", "star", "simulate")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULTS: dict = {
    "mode": None,
    "geometry": "symmetric",
    "fixed_km": 0.005,
    "distance_semantics": "total",
    "distance_start": 1.0,
    "distance_stop": 1.0,
    "distance_points": 1,
    "loss_db_per_km": 0.2,
    "nbar": None,
    "zeta": None,
    "mu": "opt",
    "mu_max": 1e6,
    "eta_eff": 1.0,
    "u_el": 0.0,
    "xi": 1.0,
    "encoder": "alice",
    # sweep
    "sweep_param": "mu",
    "sweep_start": 2.0,
    "sweep_stop": 1e4,
    "sweep_points": 20,
    "sweep_log": True,
    # finite size
    "n_total": 10**7,
    "n_bks": 1,
    "pe_ratio": "opt",
    "d_bits": 14,
    "eps": 2.0**-32,
    "p_ec": 1.0,
    "xi_hat": None,
    # post-selection
    "sigma2": "opt",
    "postselect": False,
    "qmc_points": 2**18,
    # star
    "num_users": "3",
    # simulation
    "rounds": 10**5,
    "dump": None,
    "seed": 0,
}

GEOMETRIES = ("symmetric", "asymmetric-alice", "asymmetric-bob")


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(mode: str, config_path=None, preset=None, overrides=(), seed=None) -> dict:
    """Merge defaults, preset, config file and ``--set`` overrides; reject unknown keys."""
    cfg = dict(DEFAULTS)
    layers = []
    if preset:
        try:
            layers.append(get_preset(preset))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
    if config_path:
        try:
            layers.append(json.loads(Path(config_path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
    sets = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        sets[k.strip()] = _parse_value(v.strip())
    layers.append(sets)
    for layer in layers:
        if not isinstance(layer, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(layer) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        cfg.update(layer)
    if cfg["mode"] not in (None, mode):
        raise ConfigError(f"configuration is for mode {cfg['mode']!r}, not {mode!r}")
    cfg["mode"] = mode
    if seed is not None:
        cfg["seed"] = seed
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def number(key, lo=None, integer=False, allow=()):
        v = cfg[key]
        if v in allow:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key} must be a number, got {v!r}")
        if integer and int(v) != v:
            raise ConfigError(f"{key} must be an integer")
        if lo is not None and v < lo:
            raise ConfigError(f"{key} must be >= {lo}")

    for key in ("distance_start", "distance_stop", "fixed_km", "u_el"):
        number(key, 0.0)
    number("distance_points", 1, integer=True)
    number("loss_db_per_km", 1e-12)
    number("mu", 1.0, allow=("opt", "opt-distance"))
    number("mu_max", 1.0)
    number("eta_eff", 1e-12)
    number("xi", 0.0)
    number("n_total", 2, integer=True)
    number("n_bks", 1, integer=True)
    number("d_bits", 1, integer=True)
    number("eps", 1e-300)
    number("p_ec", 1e-12)
    number("pe_ratio", 0.0, allow=("opt",))
    number("sigma2", 1e-12, allow=("opt",))
    number("qmc_points", 1, integer=True)
    number("rounds", 1, integer=True)
    number("seed", 0, integer=True)
    if cfg["mu"] == "opt-distance" and cfg["mode"] != "star":
        raise ConfigError("mu='opt-distance' is only valid in star mode")
    if cfg["distance_semantics"] not in ("total", "per-link"):
        raise ConfigError("distance_semantics must be 'total' or 'per-link'")
    for g in _geometries(cfg):
        if g not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}, got {g!r}")
    if cfg["encoder"] not in ("alice", "bob"):
        raise ConfigError("encoder must be 'alice' or 'bob'")
    if cfg["nbar"] is not None and cfg["zeta"] is not None:
        raise ConfigError("set at most one of nbar and zeta")
    if not 0.0 < cfg["eps"] < 1.0:
        raise ConfigError("eps must lie in (0, 1)")
    try:
        users = _users(cfg)
    except ValueError:
        raise ConfigError("num_users must be a comma-separated list of integers") from None
    if min(users) < 2:
        raise ConfigError("num_users entries must be >= 2")


def _geometries(cfg) -> list[str]:
    return [g.strip() for g in str(cfg["geometry"]).split(",") if g.strip()]


def _users(cfg) -> list[int]:
    return [int(x) for x in str(cfg["num_users"]).split(",") if x.strip()]


def _distances(cfg) -> np.ndarray:
    return np.linspace(cfg["distance_start"], cfg["distance_stop"], int(cfg["distance_points"]))


def _noise(cfg) -> dict:
    if cfg["zeta"] is not None:
        return {"zeta": float(cfg["zeta"])}
    return {"nbar": float(cfg["nbar"] or 0.0)}


def _link(cfg, d_km: float) -> LinkParams:
    return LinkParams.from_distance(max(d_km, 0.0), loss_db_per_km=cfg["loss_db_per_km"], **_noise(cfg))


def _links(cfg, geometry: str, d: float) -> tuple[LinkParams, LinkParams]:
    total = d if cfg["distance_semantics"] == "total" else 2.0 * d
    if geometry == "symmetric":
        return _link(cfg, total / 2.0), _link(cfg, total / 2.0)
    fixed = cfg["fixed_km"]
    far = max(total - fixed, 0.0) if cfg["distance_semantics"] == "total" else d
    if geometry == "asymmetric-alice":
        return _link(cfg, fixed), _link(cfg, far)
    return _link(cfg, far), _link(cfg, fixed)


def _mdi(cfg, geometry: str, d: float, mu: float | None = None) -> MdiConfig:
    la, lb = _links(cfg, geometry, d)
    mu = mu if mu is not None else (cfg["mu_max"] if cfg["mu"] == "opt" else float(cfg["mu"]))
    return MdiConfig(mu, la, lb, eta_eff=cfg["eta_eff"], u_el=cfg["u_el"], xi=cfg["xi"], encoder=cfg["encoder"])


def _row(base: dict, result) -> dict:
    row = dict(base)
    row.update(result.as_row())
    return row


# -- mode runners; each returns a list of row dicts in axis order


def _run_rate(cfg, pool):
    tasks = [(g, d) for g in _geometries(cfg) for d in _distances(cfg)]

    def one(task):
        g, d = task
        mdi = _mdi(cfg, g, d)
        res = optimize_modulation(mdi, cfg["mu_max"]) if cfg["mu"] == "opt" else asymptotic_rate(mdi)
        return _row({"geometry": g, "distance_km": float(d)}, res)

    return list(pool.map(one, tasks))


def _run_sweep(cfg, pool):
    key = cfg["sweep_param"]
    if key not in ("mu", "eta_eff", "u_el", "xi", "nbar", "zeta"):
        raise ConfigError(f"cannot sweep {key!r}")
    if cfg["sweep_log"]:
        values = np.logspace(math.log10(cfg["sweep_start"]), math.log10(cfg["sweep_stop"]), int(cfg["sweep_points"]))
    else:
        values = np.linspace(cfg["sweep_start"], cfg["sweep_stop"], int(cfg["sweep_points"]))
    g, d = _geometries(cfg)[0], float(cfg["distance_start"])

    def one(v):
        local = dict(cfg, **{key: float(v)})
        if key in ("nbar", "zeta"):
            local["zeta" if key == "nbar" else "nbar"] = None
        if key == "mu":
            local["mu"] = float(v)
        mdi = _mdi(local, g, d)
        res = optimize_modulation(mdi, local["mu_max"]) if local["mu"] == "opt" else asymptotic_rate(mdi)
        return _row({"geometry": g, "distance_km": d, key: float(v)}, res)

    return list(pool.map(one, values))


def _finite_params(cfg) -> FiniteSizeParams:
    eps = cfg["eps"]
    ratio = 0.1 if cfg["pe_ratio"] == "opt" else cfg["pe_ratio"]
    return FiniteSizeParams(
        n_total=int(cfg["n_total"]),
        m=int(round(ratio * cfg["n_total"])),
        n_bks=int(cfg["n_bks"]),
        d_bits=int(cfg["d_bits"]),
        eps_s=eps, eps_h=eps, eps_cor=eps, eps_ent=eps, eps_pe=eps,
        p_ec=cfg["p_ec"],
        xi_hat=cfg["xi_hat"],
    )


def _run_finite(cfg, pool):
    params = _finite_params(cfg)
    ratios = PE_RATIO_GRID if cfg["pe_ratio"] == "opt" else (cfg["pe_ratio"],)
    tasks = [(g, d) for g in _geometries(cfg) for d in _distances(cfg)]

    def one(task):
        g, d = task
        if cfg["mu"] == "opt":
            res = optimize_pe_and_modulation(params, _mdi(cfg, g, d, 10.0), ratios, cfg["mu_max"])
        else:
            mdi = _mdi(cfg, g, d)
            cands = [composable_rate(params.with_pe_ratio(r), None, mdi) for r in ratios]
            res = max(cands, key=lambda r: r.diagnostics["unclamped"])
        return _row({"geometry": g, "distance_km": float(d)}, res)

    return list(pool.map(one, tasks))


def _run_postselect(cfg, pool):
    tasks = [(g, d) for g in _geometries(cfg) for d in _distances(cfg)]

    def one(task):
        g, d = task
        la, lb = _links(cfg, g, d)
        s2 = 1.0 if cfg["sigma2"] == "opt" else float(cfg["sigma2"])
        ps = PsConfig(s2, la, lb, u_el=cfg["u_el"])
        res = optimize_sigma2(ps) if cfg["sigma2"] == "opt" else postselected_rate(ps)
        row = {"geometry": g, "distance_km": float(d), "rate_bits_per_use": res.rate_bits_per_use,
               "i_ab": float("nan"), "i_eve": float("nan")}
        row.update({k: v for k, v in res.as_row().items() if k != "rate_bits_per_use"})
        return row

    return list(pool.map(one, tasks))


def _run_star(cfg, pool):
    rows = []
    dists = _distances(cfg)
    for n in _users(cfg):
        if cfg["postselect"]:
            if n != 3:
                raise ConfigError("post-selected star runs need num_users = 3")
            s2 = 1.0 if cfg["sigma2"] == "opt" else float(cfg["sigma2"])

            def one(d, s2=s2):
                res = three_user_postselected_rate(
                    symmetric_links(3, d, float(cfg["nbar"] or 0.0)), s2, int(cfg["qmc_points"]), seed=int(cfg["seed"])
                )
                return {"num_users": 3, "distance_km": float(d), "rate_bits_per_use": res.rate_bits_per_use,
                        "i_ab": float("nan"), "i_eve": float("nan"), "std_error": res.std_error,
                        "points": res.points, "sigma2": s2}

            rows += list(pool.map(one, dists))
            continue
        nbar = float(cfg["nbar"] or 0.0)
        extra = {}
        if cfg["mu"] == "opt-distance":
            best = optimize_for_max_distance(n, nbar)
            mu = best.mu if best.served else 2.0
            extra = {"max_radius_km": best.radius_km, "served": best.served}
        elif cfg["mu"] == "opt":
            mu = None
        else:
            mu = float(cfg["mu"])

        def one(d, n=n, mu=mu, extra=extra):
            if mu is None:
                m, _ = maximize_over_log_modulation(
                    lambda x: conference_rate(StarConfig.symmetric(n, d, x, nbar, u_el=cfg["u_el"])).rate_bits_per_use,
                    1e4,
                    15,
                )
            else:
                m = mu
            res = conference_rate(StarConfig.symmetric(n, d, m, nbar, u_el=cfg["u_el"]))
            row = {"num_users": n, "distance_km": float(d)}
            row.update(res.as_row())
            row.update(extra)
            return row

        rows += list(pool.map(one, dists))
    return rows


def _run_simulate(cfg, pool):
    g, d = _geometries(cfg)[0], float(cfg["distance_start"])
    mu = 10.0 if cfg["mu"] == "opt" else float(cfg["mu"])
    mdi = _mdi(cfg, g, d, mu)
    batch = simulate_rounds(mdi, int(cfg["rounds"]), int(cfg["seed"]), threads=pool._max_workers)
    est = estimate_channel(batch)
    mi, se = empirical_mutual_information(batch)
    if cfg["dump"]:
        write_dump(batch, cfg["dump"])
    la, lb = mdi.effective_links()
    return [{
        "geometry": g,
        "distance_km": d,
        "rate_bits_per_use": float("nan"),
        "i_ab": mutual_information_ab(mdi),
        "i_eve": float("nan"),
        "rounds": batch.rounds,
        "seed": batch.seed,
        "i_ab_empirical": mi,
        "i_ab_std_error": se,
        "tau_a": la.tau,
        "tau_b": lb.tau,
        "tau_a_hat": est.tau_a_hat,
        "tau_b_hat": est.tau_b_hat,
        "xi_noise_hat": est.xi_noise_hat,
        "h_key": empirical_key_entropy(batch, int(cfg["d_bits"])),
    }]


RUNNERS = {
    "rate": _run_rate,
    "sweep": _run_sweep,
    "finite": _run_finite,
    "postselect": _run_postselect,
    "star": _run_star,
    "simulate": _run_simulate,
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    lead = [c for c in ("geometry", "num_users", "distance_km", "rate_bits_per_use", "i_ab", "i_eve") if c in cols]
    cols = lead + [c for c in cols if c not in lead]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) if c in r else "" for c in cols])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvmdi", description="CV-MDI-QKD key-rate calculator")
    p.add_argument("--version", action="version", version=f"cvmdi {__version__}")
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        s = sub.add_parser(mode)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--preset", metavar="NAME")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        s.add_argument("--out", metavar="PATH")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, default=1)
    sub.add_parser("presets")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.mode == "presets":
        print("\n".join(presets()))
        return EXIT_OK
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = resolve_config(args.mode, args.config, args.preset, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"cvmdi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with ThreadPoolExecutor(args.threads) as pool:
            rows = RUNNERS[args.mode](cfg, pool)
    except ConfigError as exc:
        print(f"cvmdi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, UnphysicalStateError):
            print(f"cvmdi: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"cvmdi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, GramError, ArithmeticError, np.linalg.LinAlgError, AssertionError) as exc:
        print(f"cvmdi: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    text = rows_to_csv(rows)
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
        sidecar = {"version": __version__, "config": cfg, "preset": args.preset}
        out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
