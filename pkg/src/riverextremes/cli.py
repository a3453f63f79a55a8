"""Command-line pipeline: ingest, decluster, fit, simulate, risk queries.

Every subcommand writes its outputs plus a machine-readable manifest
(inputs, seed, versions, timings) into the output directory. Identical
inputs and seeds give identical output files. Error categories map to
distinct exit codes: 3 input/parse, 4 estimation, 5 model domain, 6 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import DomainError, EstimationError, InputError
from .events import decluster, load_events, read_discharges, save_events, to_pareto
from .fit import FitConfig, FitMethod, bootstrap_se, fit_dependence
from .hr_core import censored_density, CensoredTerm, exponent_measure, spectral_density
from .kernels import (
    KernelVariant,
    hr_structure,
    load_kernel_params,
    load_stations,
    save_kernel_params,
)
from .margins import (
    MarginalModel,
    fit_regional,
    fit_station,
    load_marginal_model,
    save_marginal_model,
)
from .network import load_network
from .risk import RiskQuery, group_max_quantiles, joint_exceedance, network_return_map
from .simulate import sample_hr, to_gev_margins

_EXIT_INPUT, _EXIT_ESTIMATION, _EXIT_DOMAIN, _EXIT_IO = 3, 4, 5, 6


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, args: dict, inputs: dict,
                    outputs: list, started: float) -> None:
    import scipy

    manifest = {
        "command": command,
        "arguments": {
            k: v for k, v in args.items()
            if k not in ("func", "command") and not k.startswith("_")
        },
        "inputs": {
            str(p): {"bytes": Path(p).stat().st_size, "sha256": _sha256(Path(p))}
            for p in inputs.values() if p and Path(p).exists()
        },
        "outputs": [str(o) for o in outputs],
        "versions": {
            "riverextremes": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "elapsed_s": round(time.time() - started, 3),
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(args):
    params, extra = load_kernel_params(args.model)
    return params, extra


def _station_subset(stations, names):
    if not names:
        return stations
    wanted = [s.strip() for s in names.split(",") if s.strip()]
    return stations.subset([stations.index(w) for w in wanted])


def _parse_floats(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


# -- subcommand handlers ------------------------------------------------------


def _cmd_ingest(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = load_stations(args.catchments)
    for summ in stations.summaries:
        net.validate_location(summ.location)
    months = tuple(int(t) for t in args.season_months.split(","))
    panel = read_discharges(args.discharges, season_months=months)
    missing = set(stations.ids) - set(panel.station_ids)
    if missing:
        raise InputError(f"discharge file lacks stations {sorted(missing)}")
    report = {
        "n_segments": len(net.segments),
        "n_stations": len(stations),
        "n_days": int(panel.values.shape[0]),
        "n_blocks": panel.n_blocks,
        "season_months": list(months),
        "missing_fraction": float(np.mean(~np.isfinite(panel.values))),
    }
    report_path = out / "ingest_report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    _write_manifest(out, "ingest", vars(args),
                    {"network": args.network, "catchments": args.catchments,
                     "discharges": args.discharges}, [report_path], started)
    print(json.dumps(report))
    return 0


def _cmd_decluster(args):
    started = time.time()
    out = _outdir(args)
    months = tuple(int(t) for t in args.season_months.split(","))
    panel = read_discharges(args.discharges, season_months=months)
    events = to_pareto(decluster(panel, args.window, seed=args.seed))
    events_path = out / "events.csv"
    save_events(events, events_path)
    _write_manifest(out, "decluster", vars(args),
                    {"discharges": args.discharges}, [events_path], started)
    print(f"events={events.n_events} blocks={events.n_blocks} "
          f"per_block={events.events_per_block:.3f}")
    return 0


def _parse_regions(spec_text, station_ids):
    if spec_text.startswith("@"):
        with open(spec_text[1:]) as fh:
            mapping = json.load(fh)
    else:
        mapping = {}
        for tok in spec_text.split(","):
            if tok.strip():
                sid, _, region = tok.partition("=")
                mapping[sid.strip()] = region.strip()
    missing = [s for s in station_ids if s not in mapping]
    if missing:
        raise InputError(f"stations without region assignment: {missing}")
    return [mapping[s] for s in station_ids]


def _cmd_fit_margins(args):
    started = time.time()
    out = _outdir(args)
    events = load_events(args.events)
    months = tuple(int(t) for t in args.season_months.split(","))
    panel = read_discharges(args.discharges, season_months=months)
    order = [list(panel.station_ids).index(s) for s in events.station_ids]
    daily = panel.values[:, order]
    thresholds = np.nanquantile(daily, args.quantile, axis=0)
    n_years = panel.n_blocks

    ids = list(events.station_ids)
    gev, thr_map, ny_map = {}, {}, {}
    regional = None
    if args.regions:
        stations = load_stations(args.catchments)
        covs = np.array(
            [stations.summaries[stations.index(s)].covariates() for s in ids]
        )
        regions = _parse_regions(args.regions, ids)
        regional = fit_regional(
            events.raw, ids, covs, regions, thresholds, n_years,
            covariate_names=("centroid_latitude", "area", "mean_altitude", "mean_slope"),
        )
        for j, sid in enumerate(ids):
            gev[sid] = regional.predict(sid, covs[j])
            thr_map[sid] = float(thresholds[j])
            ny_map[sid] = n_years
    else:
        for j, sid in enumerate(ids):
            col = events.raw[:, j]
            exc = col[np.isfinite(col) & (col > thresholds[j])]
            res = fit_station(exc, float(thresholds[j]), n_years)
            gev[sid] = res.params
            thr_map[sid] = float(thresholds[j])
            ny_map[sid] = n_years
    model = MarginalModel(ids, gev, thr_map, ny_map, regional)
    path = out / "margins.json"
    save_marginal_model(model, path)
    _write_manifest(out, "fit-margins", vars(args),
                    {"events": args.events, "discharges": args.discharges,
                     "catchments": args.catchments}, [path], started)
    for sid in ids:
        g = gev[sid]
        print(f"{sid}: loc={g.loc:.2f} scale={g.scale:.2f} shape={g.shape:.3f}")
    return 0


def _cmd_fit_dependence(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = load_stations(args.catchments)
    events = load_events(args.events)
    stations = stations.subset([stations.index(s) for s in events.station_ids])
    config = FitConfig(
        method=FitMethod(args.method),
        spectral_radius=args.spectral_radius,
        censored_threshold=args.threshold,
        grid_points=args.grid_points,
        max_evals=args.max_evals,
        qmc_seed=args.seed,
        cdf_accuracy=args.cdf_accuracy,
        cdf_budget=args.cdf_budget,
    )
    variant = KernelVariant(args.variant)
    result = fit_dependence(config, events, net, stations, variant)
    extra = {
        "method": result.method.value,
        "loglik": result.loglik,
        "n_extreme": result.n_extreme,
        "n_events": int(events.n_events),
        "events_per_year": float(events.events_per_block),
        "converged": result.converged,
        "boundary": list(result.boundary),
        "seed": args.seed,
    }
    if args.bootstrap:
        boot = bootstrap_se(
            config, events, net, stations, variant,
            n_replicates=args.bootstrap, seed=args.seed,
            start=result.params, n_jobs=args.threads,
        )
        extra["bootstrap_se"] = boot.se.tolist()
        extra["bootstrap_replicates"] = int(args.bootstrap)
    path = out / "model.json"
    save_kernel_params(result.params, path, extra=extra)
    _write_manifest(out, "fit-dependence", vars(args),
                    {"events": args.events, "network": args.network,
                     "catchments": args.catchments}, [path], started)
    p = result.params
    print(f"variant={variant.value} loglik={result.loglik:.3f} "
          f"n_extreme={result.n_extreme} lambda_riv={p.lambda_riv:.4g} "
          f"lambda_euc={p.lambda_euc:.4g} tau={p.tau:.4g} alpha={p.alpha:.4g} "
          f"beta={p.beta:.4g} c={p.c:.4g}")
    return 0


def _cmd_simulate(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = _station_subset(load_stations(args.catchments), args.stations)
    params, _ = _load_model(args)
    hr = hr_structure(params, net, stations)
    draws = sample_hr(hr, args.draws, seed=args.seed)
    if args.margins == "gev":
        if not args.marginal_model:
            raise InputError("GEV margins need --marginal-model")
        marginal = load_marginal_model(args.marginal_model)
        laws = [marginal.params_for(s) for s in stations.ids]
        draws = to_gev_margins(
            draws,
            [g.shape for g in laws],
            [g.scale for g in laws],
            [g.loc for g in laws],
        )
    df = pd.DataFrame(draws, columns=list(stations.ids))
    path = out / "draws.csv"
    df.to_csv(path, index=False, float_format="%.10g")
    _write_manifest(out, "simulate", vars(args),
                    {"model": args.model, "network": args.network,
                     "catchments": args.catchments}, [path], started)
    print(f"wrote {args.draws} draws for {len(stations)} stations")
    return 0


def _cmd_exceed(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = _station_subset(load_stations(args.catchments), args.stations)
    params, extra = _load_model(args)
    kw = dict(
        params=params, net=net, stations=stations,
        events_per_year=extra.get("events_per_year", 1.0),
        mc_samples=args.mc_samples, seed=args.seed,
    )
    if args.levels:
        marginal = load_marginal_model(args.marginal_model)
        kw["gev"] = tuple(marginal.params_for(s) for s in stations.ids)
        kw["levels"] = tuple(_parse_floats(args.levels))
    else:
        kw["quantile"] = args.quantile
    query = RiskQuery(**kw)
    result = joint_exceedance(query, method=args.method)
    df = pd.DataFrame(
        [
            {
                "stations": ",".join(map(str, stations.ids)),
                "levels": args.levels or "",
                "quantile": args.quantile if args.quantile else "",
                "frechet_levels": ";".join(f"{v:.6g}" for v in result.frechet_levels),
                "annual_rate": result.annual_rate,
                "per_event_prob": result.per_event_prob,
                "error": result.error,
                "method": result.method,
            }
        ]
    )
    path = out / "exceed.csv"
    df.to_csv(path, index=False, float_format="%.10g")
    _write_manifest(out, "exceed", vars(args),
                    {"model": args.model, "network": args.network,
                     "catchments": args.catchments}, [path], started)
    print(df.to_string(index=False))
    return 0


def _cmd_groupmax(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = _station_subset(load_stations(args.catchments), args.stations)
    params, _ = _load_model(args)
    result = group_max_quantiles(params, net, stations, _parse_floats(args.probs),
                                 seed=args.seed)
    path = out / "groupmax.csv"
    result.table.to_csv(path, index=False, float_format="%.10g")
    _write_manifest(out, "groupmax", vars(args),
                    {"model": args.model, "network": args.network,
                     "catchments": args.catchments}, [path], started)
    print(f"theta_group={result.theta_group:.5f}")
    print(result.table.to_string(index=False))
    return 0


def _cmd_returnmap(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = load_stations(args.catchments)
    marginal = load_marginal_model(args.marginal_model)
    table = network_return_map(marginal, net, args.t_years, args.step_km,
                               stations=stations)
    path = out / "returnmap.csv"
    table.to_csv(path, index=False, float_format="%.10g")
    _write_manifest(out, "returnmap", vars(args),
                    {"marginal_model": args.marginal_model, "network": args.network,
                     "catchments": args.catchments}, [path], started)
    print(f"wrote {len(table)} sampled points")
    return 0


def _cmd_validate(args):
    started = time.time()
    out = _outdir(args)
    net = load_network(args.network)
    stations = _station_subset(load_stations(args.catchments), args.stations)
    params, _ = _load_model(args)
    hr = hr_structure(params, net, stations)
    rng = np.random.default_rng(args.seed)
    m = hr.m
    checks = {}

    x = rng.uniform(0.5, 5.0, size=m)
    v1 = exponent_measure(hr, x, seed=args.seed)
    v2 = exponent_measure(hr, 2.0 * x, seed=args.seed)
    checks["homogeneity"] = abs(v2 - v1 / 2.0) <= 1e-9 * v1

    z = float(rng.uniform(1.0, 10.0))
    marg = np.full(m, np.inf)
    marg[0] = z
    checks["marginal_constraint"] = abs(exponent_measure(hr, marg, seed=args.seed) - 1.0 / z) <= 1e-9

    perm = rng.permutation(m)
    hp = hr.subset(perm)
    va = exponent_measure(hr, x, seed=args.seed)
    vb = exponent_measure(hp, x[perm], seed=args.seed)
    checks["anchor_invariance"] = abs(va - vb) <= 1e-8 * max(va, 1.0)

    y = rng.uniform(10.0, 40.0, size=m)
    dens = censored_density(hr, CensoredTerm.from_event(y, np.full(m, 1.0)), seed=args.seed)
    r = y.sum()
    spect = spectral_density(hr, y / r) * r ** (-(m + 1))
    checks["full_density_consistency"] = abs(dens - spect) <= 1e-8 * max(dens, 1e-300)

    ok = all(checks.values())
    report = {"checks": {k: bool(v) for k, v in checks.items()}, "pass": ok}
    path = out / "validate_report.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    _write_manifest(out, "validate", vars(args),
                    {"model": args.model, "network": args.network,
                     "catchments": args.catchments}, [path], started)
    for name, good in checks.items():
        print(f"{name}: {'pass' if good else 'FAIL'}")
    return 0 if ok else _EXIT_DOMAIN


# -- parser -------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riverextremes",
        description="Max-stable dependence modelling of flood extremes on river networks",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, network=True, catchments=True):
        if network:
            p.add_argument("--network", required=True, help="network topology JSON")
        if catchments:
            p.add_argument("--catchments", required=True, help="station/catchment CSV")
        p.add_argument("--outdir", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest", help="validate and summarise the input files")
    add_common(p)
    p.add_argument("--discharges", required=True)
    p.add_argument("--season-months", default="6,7,8")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("decluster", help="extract independent multivariate events")
    p.add_argument("--discharges", required=True)
    p.add_argument("--window", type=int, default=9, help="window length in days")
    p.add_argument("--season-months", default="6,7,8")
    p.add_argument("--outdir", default=".")
    p.add_argument("--seed", type=int, default=0, help="tie-breaking seed")
    p.set_defaults(func=_cmd_decluster)

    p = sub.add_parser("fit-margins", help="fit GEV tail models per station or regionally")
    p.add_argument("--events", required=True)
    p.add_argument("--discharges", required=True)
    p.add_argument("--catchments", required=False, default=None)
    p.add_argument("--regions", default="", help="sid=R pairs or @mapping.json")
    p.add_argument("--quantile", type=float, default=0.9, help="daily threshold quantile")
    p.add_argument("--season-months", default="6,7,8")
    p.add_argument("--outdir", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit_margins)

    p = sub.add_parser("fit-dependence", help="fit the dependence kernel to events")
    add_common(p)
    p.add_argument("--events", required=True)
    p.add_argument("--variant", choices=[v.value for v in KernelVariant], default="full")
    p.add_argument("--method", choices=[m.value for m in FitMethod], default="censored")
    p.add_argument("--threshold", type=float, default=10.0,
                   help="per-station censoring threshold on the Pareto scale")
    p.add_argument("--spectral-radius", type=float, default=None)
    p.add_argument("--grid-points", type=int, default=4)
    p.add_argument("--max-evals", type=int, default=2000)
    p.add_argument("--cdf-accuracy", type=float, default=5e-4)
    p.add_argument("--cdf-budget", type=int, default=60_000)
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_fit_dependence)

    p = sub.add_parser("simulate", help="draw exact samples from a fitted model")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--stations", default="", help="comma list; default all")
    p.add_argument("-n", "--draws", type=int, default=1000)
    p.add_argument("--margins", choices=["frechet", "gev"], default="frechet")
    p.add_argument("--marginal-model", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("exceed", help="joint exceedance probability for a station group")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--stations", required=True)
    p.add_argument("--levels", default="", help="raw levels, comma separated")
    p.add_argument("--quantile", type=float, default=None,
                   help="event-scale probability level")
    p.add_argument("--marginal-model", default=None)
    p.add_argument("--method", choices=["auto", "exact", "mc"], default="auto")
    p.add_argument("--mc-samples", type=int, default=200_000)
    p.set_defaults(func=_cmd_exceed)

    p = sub.add_parser("groupmax", help="groupwise maxima quantiles on the Gumbel scale")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--stations", default="")
    p.add_argument("--probs", default="0.5,0.9,0.95,0.99")
    p.set_defaults(func=_cmd_groupmax)

    p = sub.add_parser("returnmap", help="return levels along the whole network")
    add_common(p)
    p.add_argument("--marginal-model", required=True)
    p.add_argument("--t-years", type=float, default=100.0)
    p.add_argument("--step-km", type=float, default=5.0)
    p.set_defaults(func=_cmd_returnmap)

    p = sub.add_parser("validate", help="run the internal oracle suite on a model")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--stations", default="")
    p.set_defaults(func=_cmd_validate)

    return parser


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return _EXIT_ESTIMATION
    except DomainError as exc:
        print(f"model domain error: {exc}", file=sys.stderr)
        return _EXIT_DOMAIN
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return _EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
