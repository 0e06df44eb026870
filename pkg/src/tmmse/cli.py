"""Experiment runner: scenario config, deterministic seeding, results emission.

Seed derivation: base seed -> per-drop, per-phase SeedSequence spawn keys
(positions, shadow, statistics pool, evaluation pool) -> per-realization
substreams inside each pool.  The statistics and evaluation pools are
therefore independent, and any (drop, realization) draw is reproducible in
isolation.  Reruns with identical config and seed produce byte-identical
rates.csv.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .channel import build_statistics, draw_ensemble, gains_table
from .evaluation import allocate, compute_mse, estimate_moments
from .precoding import SCHEMES, apply_scheme, fit_scheme, write_matrix_dump
from .topology import assign_serving_stripes, build_grid_deployment

SCHEMA_VERSION = 1
ENV_PREFIX = "TMMSE_"
POWER_MODES = ("sum", "per-tx")

# spawn-key phases under each (base_seed, drop)
PHASE_POSITIONS, PHASE_SHADOW, PHASE_STATS, PHASE_EVAL = range(4)


def phase_seed(base_seed, drop, phase):
    return np.random.SeedSequence(base_seed, spawn_key=(drop, phase))


@dataclass
class ScenarioConfig:
    """Scenario and experiment parameters (defaults: the IIoT case study)."""

    num_stripes: int = 5
    txs_per_stripe: int = 20
    antennas_per_tx: int = 1
    num_users: int = 10
    area_m: tuple = (100.0, 50.0)
    height_m: float = 7.0
    ricean_kappa: float = 6.0
    carrier_ghz: float = 4.9
    bandwidth_hz: float = 100e6
    noise_figure_db: float = 7.0
    shadow_std_db: float = 4.0
    serving_stripes_per_user: int = 2
    weights: list = None  # None -> uniform 1/K
    per_tx_power_mw: float = 1.0
    sum_power_mw: float = None  # overrides per_tx_power_mw * L when set
    drops: int = 100
    statistics_samples: int = 1000
    evaluation_samples: int = 1000
    base_seed: int = 1
    schemes: tuple = SCHEMES
    power_modes: tuple = POWER_MODES
    rate_units: str = "bits"
    output_dir: str = "results"
    strict: bool = False
    clamp_negative_powers: bool = False
    dump_gains: bool = False
    dump_stats: bool = False

    @property
    def num_txs(self):
        return self.num_stripes * self.txs_per_stripe

    def resolved_weights(self):
        if self.weights is None:
            return np.full(self.num_users, 1.0 / self.num_users)
        return np.asarray(self.weights, dtype=float)

    def tx_budgets(self):
        """Per-TX power budgets in mW (symmetric)."""
        if self.sum_power_mw is not None:
            return np.full(self.num_txs, self.sum_power_mw / self.num_txs)
        return np.full(self.num_txs, self.per_tx_power_mw)

    def total_power(self):
        return float(self.tx_budgets().sum())

    def validate(self):
        if min(self.num_stripes, self.txs_per_stripe, self.antennas_per_tx) < 1:
            raise ValueError("geometry counts must be >= 1")
        if self.num_users < 1:
            raise ValueError("need at least one user")
        if not 1 <= self.serving_stripes_per_user <= self.num_stripes:
            raise ValueError("serving stripe count out of range")
        if self.area_m[0] <= 0 or self.area_m[1] <= 0:
            raise ValueError("area dimensions must be positive")
        if self.ricean_kappa < 0 or self.shadow_std_db < 0:
            raise ValueError("kappa and shadow sigma must be >= 0")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        w = self.resolved_weights()
        if len(w) != self.num_users or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the simplex over the users")
        if self.total_power() <= 0:
            raise ValueError("power budget must be positive")
        if self.drops < 1 or self.statistics_samples < 1 or self.evaluation_samples < 1:
            raise ValueError("drops and sample counts must be >= 1")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; expected one of {SCHEMES}")
        for m in self.power_modes:
            if m not in POWER_MODES:
                raise ValueError(f"unknown power mode {m!r}")
        if self.rate_units not in ("bits", "nats"):
            raise ValueError("rate_units must be 'bits' or 'nats'")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["area_m"] = list(self.area_m)
        d["schemes"] = list(self.schemes)
        d["power_modes"] = list(self.power_modes)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("schema_version", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "area_m" in d:
            d["area_m"] = tuple(float(x) for x in d["area_m"])
        if "schemes" in d:
            d["schemes"] = tuple(d["schemes"])
        if "power_modes" in d:
            d["power_modes"] = tuple(d["power_modes"])
        return cls(**d)


def load_config(path):
    with open(path) as f:
        return ScenarioConfig.from_dict(json.load(f))


@dataclass
class RunResult:
    rate_rows: list  # (drop, user, scheme, power_mode, rate)
    records: list  # per (drop, scheme, mode) dicts
    failures: list
    timings: dict
    out_dir: str = None


def _run_drop(config, drop, deployment, rows, records, failures, timings, out_dir):
    w = config.resolved_weights()
    total_power = config.total_power()
    budgets = config.tx_budgets()

    t0 = time.perf_counter()
    rng_pos = np.random.default_rng(phase_seed(config.base_seed, drop, PHASE_POSITIONS))
    rx_xy = rng_pos.uniform((0.0, 0.0), config.area_m, size=(config.num_users, 2))
    dep = deployment.place_users(rx_xy)
    assoc = assign_serving_stripes(dep, config.serving_stripes_per_user)
    stats = build_statistics(
        dep,
        assoc,
        config.ricean_kappa,
        config.carrier_ghz,
        config.bandwidth_hz,
        config.noise_figure_db,
        config.shadow_std_db,
        np.random.default_rng(phase_seed(config.base_seed, drop, PHASE_SHADOW)),
    )
    csi = stats.csi_model()
    ens_stats = draw_ensemble(
        stats, csi, config.statistics_samples,
        phase_seed(config.base_seed, drop, PHASE_STATS), drop,
    )
    ens_eval = draw_ensemble(
        stats, csi, config.evaluation_samples,
        phase_seed(config.base_seed, drop, PHASE_EVAL), drop,
    )
    psi = csi.psi_stack(w)
    stripes = dep.stripes()
    timings["channel"] += time.perf_counter() - t0

    if config.dump_gains and out_dir:
        with open(os.path.join(out_dir, f"gains_drop{drop}.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["l", "k", "distance_m", "PL_dB", "rho2"])
            for row in gains_table(stats):
                writer.writerow([row[0], row[1]] + [f"{x:.12g}" for x in row[2:]])

    for scheme in config.schemes:
        try:
            t0 = time.perf_counter()
            state = fit_scheme(scheme, ens_stats, assoc, stripes, psi, w, total_power)
            timings["statistics"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            precoders = apply_scheme(state, ens_eval, assoc, stripes, psi, w, total_power)
            moments = estimate_moments(ens_eval, precoders)
            mse = compute_mse(ens_eval, precoders, w, total_power)
            timings["evaluation"] += time.perf_counter() - t0
            if config.dump_stats and out_dir:
                mats = []
                if state.stripe_stats is not None:
                    mats += [st.pi[0] for st in state.stripe_stats]
                if state.stripe_coupling is not None:
                    mats += list(state.stripe_coupling)
                if state.stripe_coeffs is not None:
                    mats += list(state.stripe_coeffs)
                if state.pi_by_tx is not None:
                    mats += list(state.pi_by_tx) + list(state.tx_coeffs)
                if mats:
                    write_matrix_dump(
                        os.path.join(out_dir, f"stats_drop{drop}_{scheme}.bin"), mats
                    )
        except Exception as exc:  # noqa: BLE001 - failures are per-run reportable
            failures.append(
                {"drop": drop, "scheme": scheme, "stage": "precoding", "error": str(exc)}
            )
            if config.strict:
                raise
            continue
        for mode in config.power_modes:
            try:
                t0 = time.perf_counter()
                rates, solution = allocate(
                    moments,
                    mse,
                    mode,
                    budgets,
                    clamp_negative=config.clamp_negative_powers,
                    units=config.rate_units,
                )
                timings["allocation"] += time.perf_counter() - t0
            except Exception as exc:  # noqa: BLE001
                failures.append(
                    {"drop": drop, "scheme": scheme, "stage": f"allocation[{mode}]",
                     "error": str(exc)}
                )
                if config.strict:
                    raise
                continue
            for k in range(config.num_users):
                rows.append((drop, k, scheme, mode, float(rates[k])))
            solution_fields = solution.to_dict()
            solution_fields.pop("mode")
            records.append(
                {
                    "drop": drop,
                    "scheme": scheme,
                    "power_mode": mode,
                    "rates": [float(r) for r in rates],
                    "mse": [float(m) for m in mse],
                    **solution_fields,
                }
            )


def run(config, out_dir=None, progress=False):
    """Execute the experiment; write rates.csv / report.json / manifest.json."""
    config.validate()
    out_dir = out_dir or config.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": config.to_dict(),
        "seed_rule": (
            "SeedSequence(base_seed, spawn_key=(drop, phase)) with phases "
            "positions=0, shadow=1, statistics=2, evaluation=3; one spawned "
            "substream per realization inside each pool"
        ),
        "timings_s": {},
        "failures": [],
    }
    if out_dir:
        _write_json(os.path.join(out_dir, "manifest.json"), manifest)

    deployment = build_grid_deployment(
        config.num_stripes,
        config.txs_per_stripe,
        config.area_m,
        config.height_m,
        config.antennas_per_tx,
    )
    rows, records, failures = [], [], []
    timings = {"channel": 0.0, "statistics": 0.0, "evaluation": 0.0, "allocation": 0.0}
    started = time.perf_counter()
    for drop in range(config.drops):
        try:
            _run_drop(config, drop, deployment, rows, records, failures, timings, out_dir)
        except Exception as exc:  # noqa: BLE001
            if config.strict:
                raise
            failures.append({"drop": drop, "scheme": None, "stage": "drop", "error": str(exc)})
        if progress:
            print(f"drop {drop + 1}/{config.drops}", file=sys.stderr)
    timings["total"] = time.perf_counter() - started

    manifest["timings_s"] = {k: round(v, 6) for k, v in timings.items()}
    manifest["failures"] = failures
    if out_dir:
        _write_rates_csv(os.path.join(out_dir, "rates.csv"), rows)
        _write_json(
            os.path.join(out_dir, "report.json"),
            {"schema_version": SCHEMA_VERSION, "records": records},
        )
        _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return RunResult(rate_rows=rows, records=records, failures=failures,
                     timings=timings, out_dir=out_dir)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _write_rates_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["drop", "user", "scheme", "power_mode", "rate_bpcu"])
        for drop, user, scheme, mode, rate in rows:
            writer.writerow([drop, user, scheme, mode, f"{rate:.12g}"])


def emit_cdf(rows):
    """Empirical CDF per (scheme, power mode): sorted rates with i/n levels."""
    if not rows:
        raise ValueError("no rate records")
    groups = {}
    for _, _, scheme, mode, rate in rows:
        groups.setdefault((scheme, mode), []).append(rate)
    out = []
    for (scheme, mode) in sorted(groups):
        rates = sorted(groups[(scheme, mode)])
        n = len(rates)
        for i, r in enumerate(rates, start=1):
            out.append((scheme, mode, r, i / n))
    return out


def read_rates_csv(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(
                (
                    int(rec["drop"]),
                    int(rec["user"]),
                    rec["scheme"],
                    rec["power_mode"],
                    float(rec["rate_bpcu"]),
                )
            )
    return rows


def write_cdf_csv(path, cdf_rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scheme", "power_mode", "rate_bpcu", "cdf"])
        for scheme, mode, rate, level in cdf_rows:
            writer.writerow([scheme, mode, f"{rate:.12g}", f"{level:.12g}"])


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def _env_flag(name):
    val = _env(name)
    return val is not None and val.lower() not in ("", "0", "false", "no")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tmmse",
        description=(
            "Distributed team-MMSE precoding simulator for radio-stripe "
            "cell-free networks. Flags override TMMSE_* environment "
            "variables, which override the config file."
        ),
    )
    parser.add_argument("--config", help="scenario JSON path")
    parser.add_argument("--seed", type=int, help="base seed (env TMMSE_SEED)")
    parser.add_argument("--drops", type=int, help="number of user drops")
    parser.add_argument("--samples-stats", type=int, help="statistics pool size")
    parser.add_argument("--samples-eval", type=int, help="evaluation pool size")
    parser.add_argument("--schemes", help="comma list of "
                        f"{','.join(SCHEMES)}")
    parser.add_argument("--power-mode", choices=["sum", "per-tx", "both"],
                        help="power constraint mode")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--strict", action="store_true", default=None,
                        help="abort on the first per-drop failure")
    parser.add_argument("--clamp-negative-powers", action="store_true", default=None,
                        help="zero out infeasible duality powers instead of failing")
    parser.add_argument("--emit-cdf", action="store_true", default=None,
                        help="also write cdf.csv from the rate records")
    parser.add_argument("--dump-gains", action="store_true", default=None,
                        help="write per-pair gain CSVs")
    parser.add_argument("--dump-stats", action="store_true", default=None,
                        help="write binary dumps of Pi matrices and coefficients")
    parser.add_argument("--progress", action="store_true", help="print drop progress")
    return parser


def resolve_config(args):
    """Merge precedence: CLI flag > environment variable > config file > default."""
    config_path = args.config or _env("CONFIG")
    config = load_config(config_path) if config_path else ScenarioConfig()
    updates = {}

    def pick(flag_value, env_name, cast):
        env_value = _env(env_name)
        if flag_value is not None:
            return flag_value
        if env_value is not None:
            return cast(env_value)
        return None

    seed = pick(args.seed, "SEED", int)
    if seed is not None:
        updates["base_seed"] = seed
    drops = pick(args.drops, "DROPS", int)
    if drops is not None:
        updates["drops"] = drops
    stats_n = pick(args.samples_stats, "SAMPLES_STATS", int)
    if stats_n is not None:
        updates["statistics_samples"] = stats_n
    eval_n = pick(args.samples_eval, "SAMPLES_EVAL", int)
    if eval_n is not None:
        updates["evaluation_samples"] = eval_n
    schemes = pick(args.schemes, "SCHEMES", str)
    if schemes is not None:
        updates["schemes"] = tuple(s.strip() for s in schemes.split(",") if s.strip())
    mode = pick(args.power_mode, "POWER_MODE", str)
    if mode is not None:
        updates["power_modes"] = POWER_MODES if mode == "both" else (mode,)
    out = pick(args.out, "OUT", str)
    if out is not None:
        updates["output_dir"] = out
    for flag, env_name, key in (
        (args.strict, "STRICT", "strict"),
        (args.clamp_negative_powers, "CLAMP_NEGATIVE_POWERS", "clamp_negative_powers"),
        (args.dump_gains, "DUMP_GAINS", "dump_gains"),
        (args.dump_stats, "DUMP_STATS", "dump_stats"),
    ):
        if flag is not None:
            updates[key] = flag
        elif _env_flag(env_name):
            updates[key] = True
    if updates:
        config = dataclasses.replace(config, **updates)
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    config = resolve_config(args)
    result = run(config, progress=args.progress)
    want_cdf = args.emit_cdf if args.emit_cdf is not None else _env_flag("EMIT_CDF")
    if want_cdf and result.rate_rows:
        write_cdf_csv(os.path.join(result.out_dir, "cdf.csv"), emit_cdf(result.rate_rows))
    n_rates = len(result.rate_rows)
    print(
        f"completed {config.drops} drops, {n_rates} rate records, "
        f"{len(result.failures)} failures -> {result.out_dir}"
    )
    return 0 if not result.failures else 1


if __name__ == "__main__":
    raise SystemExit(main())
