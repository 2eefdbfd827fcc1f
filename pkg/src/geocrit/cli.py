"""Command-line front end.

Subcommands: find (critical-point survey), index (spectral reports),
diagnose (Besse/Zoll + coverage report), cover (through-point test).
Inputs are TOML configs; outputs are JSON, CSV (floats at 17 significant
digits), and plain whitespace-delimited polylines.  Identical config + seed
give byte-identical outputs.

Exit codes: 0 success (a cover miss is a result, not a failure), 2 config
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import critical as cr
from . import diagnostics as dg
from . import loopspace as ls
from . import manifold as mf
from . import morse as mo
from .errors import GeocritError, DomainError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required field '{key}' in [{where}]")
    return table[key]


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")


def build_model(cfg: dict) -> mf.MetricModel:
    table = _require(cfg, "metric", "metric")
    name = _require(table, "model", "metric")
    spec = {"model": name, "rho": table.get("rho")}
    if name == "round":
        spec["dim"] = table.get("dim", 2)
    elif name == "ellipsoid":
        spec["params"] = _require(table, "axes", "metric")
    elif name == "revolution_zoll":
        spec["params"] = [table.get("amplitude", 0.0)]
    else:
        raise ConfigError(f"unknown metric model '{name}'")
    try:
        return mf.make_model(spec)
    except DomainError as exc:
        raise ConfigError(str(exc))


def build_params(cfg: dict, model: mf.MetricModel) -> ls.LoopParams:
    table = _require(cfg, "loop", "loop")
    delta = float(_require(table, "delta", "loop"))
    if not 0 < delta < model.rho:
        raise ConfigError(f"delta must lie in (0, rho = {model.rho:g})")
    if "k" in table:
        k = int(table["k"])
    elif "target_length" in table:
        # strict inequality k > k_threshold requires the +1
        kbar = ls.k_threshold(float(table["target_length"]), delta, model.rho)
        k = int(np.ceil(kbar)) + 1
    else:
        raise ConfigError("missing required field 'k' or 'target_length' in [loop]")
    try:
        return ls.LoopParams(model, delta, k)
    except DomainError as exc:
        raise ConfigError(str(exc))


def build_search(cfg: dict, seed_override: int | None) -> cr.SearchConfig:
    table = dict(cfg.get("search", {}))
    if seed_override is not None:
        table["seed"] = seed_override
    known = cr.SearchConfig.__dataclass_fields__
    unknown = set(table) - set(known)
    if unknown:
        raise ConfigError(f"unknown field(s) in [search]: {sorted(unknown)}")
    try:
        return cr.SearchConfig(**table)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"bad [search] table: {exc}")


# ---------------------------------------------------------------------------
# deterministic output helpers


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _jsonify(obj):
    """Round-trip floats through 17-significant-digit formatting so the
    serialized form matches the CSV convention exactly."""
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonify(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def write_polyline(path: Path, pts: np.ndarray) -> None:
    lines = [" ".join(f"{v:.17g}" for v in p) for p in np.asarray(pts)]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_find(cfg: dict, out: Path, search: cr.SearchConfig, workers: int) -> int:
    model = build_model(cfg)
    params = build_params(cfg, model)
    table = cfg.get("find", {})
    window = table.get("window")
    if window is not None:
        window = (float(window[0]), float(window[1]))
    found = cr.multistart(model, params, search, window=window)
    rows = []
    for i, cp in enumerate(found):
        write_json(out / f"critical_{i:03d}.json", cp.to_dict())
        broken = ls.reconstruct(cp.config)
        write_polyline(out / f"critical_{i:03d}.polyline", broken.sample_polyline())
        rows.append(
            [cp.kind.value, cp.energy, cp.period if cp.period is not None else "",
             cp.grad_norm, f"critical_{i:03d}.json"]
        )
    write_csv(out / "survey.csv",
              ["kind", "energy", "period", "grad_norm", "file"], rows)
    print(f"{len(found)} critical points -> {out / 'survey.csv'}")
    return EXIT_OK


def _load_critical(path: Path, model: mf.MetricModel) -> cr.CriticalPoint:
    data = json.loads(path.read_text())
    config = ls.LoopConfig.from_dict(data["config"], model=model)
    search = cr.SearchConfig()
    return cr.refine(config, search)


def cmd_index(cfg: dict, out: Path, search: cr.SearchConfig, workers: int,
              points_file: str | None, check_bott: int | None) -> int:
    model = build_model(cfg)
    params = build_params(cfg, model)
    if points_file:
        paths = [Path(points_file)]
        if paths[0].is_dir():
            paths = sorted(paths[0].glob("critical_*.json"))
    else:
        paths = sorted(Path(cfg.get("find", {}).get("dir", out)).glob("critical_*.json"))
    if not paths:
        raise ConfigError("no critical-point files to index; run 'find' first")
    reports = []
    smooth_by_period: dict[float, tuple] = {}
    for path in paths:
        cp = _load_critical(path, model)
        H, asym = mo.hessian(cp, workers=workers, full_output=True)
        rep = mo.index_nullity(H, asymmetry=asym)
        entry = {
            "file": path.name,
            "kind": cp.kind.value,
            "energy": cp.energy,
            "report": rep.to_dict(),
        }
        reports.append(entry)
        if cp.kind is cr.Kind.SMOOTH:
            smooth_by_period[round(cp.period, 6)] = (cp, rep)
    # zig-zag versus smooth-partner inequalities
    for entry, path in zip(reports, paths):
        if entry["kind"] != cr.Kind.ZIGZAG.value:
            continue
        period = round(float(np.sqrt(entry["energy"])) - 2 * params.delta, 6)
        partner = smooth_by_period.get(period)
        if partner is None:
            continue
        _, srep = partner
        zrep = entry["report"]
        entry["smooth_partner_check"] = {
            "index_le": srep.index <= zrep["index"],
            "index_plus_kernel_le":
                srep.index + srep.kernel_dim <= zrep["index"] + zrep["kernel_dim"],
            "smooth_index": srep.index,
            "smooth_kernel": srep.kernel_dim,
        }
    output = {"reports": reports}
    if check_bott:
        output["bott"] = _bott_table(model, params, search, reports, check_bott,
                                     workers)
    write_json(out / "spectral.json", output)
    print(f"{len(reports)} spectral reports -> {out / 'spectral.json'}")
    return EXIT_OK


def _bott_table(model, params, search, reports, m_max: int, workers: int) -> list:
    """Measure iterate indices of the lowest smooth geodesic and compare
    against the iteration formula."""
    smooth = [r for r in reports if r["kind"] == cr.Kind.SMOOTH.value]
    if not smooth:
        raise ConfigError("--check-bott needs at least one smooth critical point")
    base = min(smooth, key=lambda r: r["energy"])
    length = float(np.sqrt(base["energy"]))
    i_prime = base["report"]["index"]
    n = model.dim
    table = [{"m": 1, "measured": i_prime,
              "expected": mo.iterate_index_expected(i_prime, 1, n),
              "kernel": base["report"]["kernel_dim"]}]
    for m in range(2, m_max + 1):
        lm = m * length
        kbar = ls.k_threshold(lm, params.delta, model.rho)
        k_m = int(np.ceil(kbar)) + 1
        params_m = ls.LoopParams(model, params.delta, k_m)
        cp = _find_iterate(model, params_m, search, lm)
        if cp is None:
            table.append({"m": m, "measured": None,
                          "expected": mo.iterate_index_expected(i_prime, m, n)})
            continue
        H, asym = mo.hessian(cp, workers=workers, full_output=True)
        rep = mo.index_nullity(H, asymmetry=asym)
        table.append({"m": m, "measured": rep.index,
                      "expected": mo.iterate_index_expected(i_prime, m, n),
                      "kernel": rep.kernel_dim})
    return table


def _find_iterate(model, params, search, length):
    rng = np.random.default_rng(search.seed)
    for q, u, cand in cr.closed_geodesic_candidates(
        model, params, max(10, search.n_starts // 2), rng, 1.001 * length
    ):
        if abs(cand - length) > 1e-5 * length:
            continue
        try:
            return cr.refine(
                ls.sample_closed_geodesic(model, params, q, u, cand), search
            )
        except GeocritError:
            continue
    return None


def cmd_diagnose(cfg: dict, out: Path, search: cr.SearchConfig, workers: int) -> int:
    model = build_model(cfg)
    params = build_params(cfg, model)
    table = cfg.get("diagnose", {})
    report = dg.minmax_gap_report(
        model,
        params,
        search,
        n_scan=int(table.get("n_scan", 200)),
        t_max=float(table.get("t_max", 20.0)),
        n_grid=int(table.get("n_grid", 40)),
        scan_tol=float(table.get("tol", 1e-6)),
    )
    write_json(out / "diagnose.json", report.to_dict())
    write_csv(
        out / "diagnose.csv",
        ["verdict", "period", "closure_fraction", "n_samples",
         "lowest_critical_energy", "coverage_fraction", "n_uncovered", "summary"],
        [report.csv_row()],
    )
    print(f"{report.verdict} -> {out / 'diagnose.json'}")
    return EXIT_OK


def cmd_cover(cfg: dict, out: Path, search: cr.SearchConfig, workers: int) -> int:
    model = build_model(cfg)
    params = build_params(cfg, model)
    table = _require(cfg, "cover", "cover")
    point = np.asarray(_require(table, "point", "cover"), dtype=float)
    if point.shape != (model.ambient,):
        raise ConfigError(
            f"cover point must have {model.ambient} components"
        )
    energy = float(_require(table, "energy", "cover"))
    n_dirs = int(table.get("n_directions", 12))
    cp = cr.find_through_point(model, params, point, energy, search,
                               n_directions=n_dirs)
    if cp is None:
        write_json(out / "cover.json", {
            "hit": False, "point": point.tolist(), "energy_target": energy,
        })
        print(f"miss -> {out / 'cover.json'}")
    else:
        write_json(out / "cover.json", {
            "hit": True, "point": point.tolist(), "energy_target": energy,
            "critical_point": cp.to_dict(),
        })
        broken = ls.reconstruct(cp.config)
        write_polyline(out / "cover.polyline", broken.sample_polyline())
        print(f"hit (E = {cp.energy:.12g}) -> {out / 'cover.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="geocrit",
        description="closed-geodesic search and diagnostics on spheres",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("find", "multistart critical-point survey"),
        ("index", "Morse index / kernel spectral reports"),
        ("diagnose", "Besse/Zoll scan and coverage report"),
        ("cover", "through-point covering test"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers for Hessian columns")
        if name == "index":
            p.add_argument("points", nargs="?", default=None,
                           help="critical-point JSON file or directory from 'find'")
            p.add_argument("--check-bott", type=int, default=None, metavar="M",
                           help="compare iterate indices up to m = M")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out is not None else cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        search = build_search(cfg, seed)
        if args.command == "find":
            return cmd_find(cfg, out, search, args.workers)
        if args.command == "index":
            return cmd_index(cfg, out, search, args.workers, args.points,
                             args.check_bott)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out, search, args.workers)
        return cmd_cover(cfg, out, search, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeocritError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
