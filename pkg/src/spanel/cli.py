"""Command-line front end wiring the full pipeline.

Subcommands: ``estimate``, ``recover-network``, ``effects``, ``spill``,
``homophily``, ``link-logit``, ``simulate``, ``weights``. Every run writes a
manifest with input hashes, the seed, the thread count, and all parameters;
results are deterministic given the seed and never depend on the thread
count. Exit codes: 0 success, 1 estimation failure, 2 I/O or config failure.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .bolmt import BolmtConfig, recover_network
from .effects import average_effects, effect_standard_errors, multiplier, spill_in, spill_out
from .errors import EstimationError, InputError, SpanelError
from .factors import build_factor_basis
from .iv import build_instruments, estimate_pooled, estimate_units
from .mgiv import mean_group
from .network import bilateral_log_average, homophily_test, link_logit
from .panel import IngestConfig, build_transformed, load_panel, save_panel
from .simulate import DgpSpec, simulate
from .weights import (
    WeightScheme,
    contiguity_weights,
    flow_weights,
    inverse_distance_weights,
    load_coordinates,
    load_pairs,
    load_weights,
    network_stats,
    row_standardize,
    save_weights,
)

EXIT_ESTIMATION = 1
EXIT_INPUT = 2


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default,
                      allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _nan_to_none(x):
    if x is None:
        return None
    arr = np.asarray(x, dtype=float)
    out = np.where(np.isfinite(arr), arr, None)
    return out.tolist()


def _manifest(out_dir: Path, inputs: dict, params: dict, seed, threads,
              outputs: list) -> None:
    payload = {
        "version": __version__,
        "inputs": {str(k): _sha256(v) for k, v in inputs.items()},
        "parameters": params,
        "seed": seed,
        "threads": threads,
        "outputs": sorted(outputs),
    }
    _write_json(out_dir / "manifest.json", payload)


def _fail(out_dir, exc: Exception, code: int):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            _write_json(Path(out_dir) / "error.json", payload)
        except OSError:
            pass
    sys.exit(code)


def _guard(out_dir, fn):
    try:
        return fn()
    except (EstimationError, np.linalg.LinAlgError) as exc:
        _fail(out_dir, exc, EXIT_ESTIMATION)
    except (InputError, FileNotFoundError, OSError, json.JSONDecodeError,
            KeyError, ValueError) as exc:
        _fail(out_dir, exc, EXIT_INPUT)
    except SpanelError as exc:
        _fail(out_dir, exc, EXIT_ESTIMATION)


def _load_weight_source(weights_path, units) -> WeightScheme:
    w = load_weights(weights_path)
    if list(w.unit_ids) != [str(u) for u in units]:
        if sorted(w.unit_ids) == sorted(str(u) for u in units):
            order = [w.unit_ids.index(str(u)) for u in units]
            mats = w.mats[..., order, :][..., :, order] if w.mats.ndim == 3 \
                else w.mats[np.ix_(order, order)]
            w = WeightScheme(mats, [str(u) for u in units],
                             row_standardized=w.row_standardized)
        else:
            raise InputError("weight matrix labels do not match panel units")
    return w


@click.group()
@click.version_option(__version__)
def main():
    """Spatial panel estimation with data-driven networks."""


_common = [
    click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory."),
    click.option("--seed", default=0, show_default=True, type=int),
    click.option("--threads", default=1, show_default=True, type=int,
                 help="Recorded in the manifest; results never depend on it."),
]


def _add_common(cmd):
    for opt in reversed(_common):
        cmd = opt(cmd)
    return cmd


@main.command()
@click.option("--data", required=True, type=click.Path(exists=False))
@click.option("--config", "config_path", type=click.Path(exists=False), default=None,
              help="JSON column-mapping config.")
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=False))
@click.option("--estimator", type=click.Choice(["pooled_2siv", "mgiv"]),
              default="mgiv", show_default=True)
@click.option("--rx", default="auto", show_default=True,
              help="Covariate factor count, or 'auto'.")
@click.option("--ry", default="auto", show_default=True,
              help="Residual factor count, or 'auto'.")
@click.option("--no-defactor", is_flag=True, default=False,
              help="Skip factor projections entirely.")
@_add_common
def estimate(data, config_path, weights_path, estimator, rx, ry, no_defactor,
             out_dir, seed, threads):
    """Estimate the dynamic spatial panel model."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        cfg = IngestConfig.from_file(config_path) if config_path else IngestConfig()
        panel = load_panel(data, cfg)
        tp = build_transformed(panel, cfg.demean)
        w = _load_weight_source(weights_path, panel.unit_ids)
        fb = None
        if not no_defactor:
            fb = build_factor_basis(tp, r_x=None if rx == "auto" else int(rx))
        insts = build_instruments(tp, w, fb)
        r_y = None if ry == "auto" else int(ry)
        pooled = estimate_pooled(tp, w, fb, r_y=r_y, instruments=insts)
        units = estimate_units(tp, w, fb, instruments=insts)
        mg = mean_group(units, names=pooled.names)
        chosen = pooled if estimator == "pooled_2siv" else mg

        result = {
            "estimator": estimator,
            "names": pooled.names,
            "theta": _nan_to_none(chosen.theta),
            "ses": _nan_to_none(chosen.ses),
            "vcov": [_nan_to_none(row) for row in np.atleast_2d(chosen.vcov)],
            "pooled": {
                "theta": _nan_to_none(pooled.theta),
                "ses": _nan_to_none(pooled.ses),
                "j_stat": pooled.j_stat,
                "j_dof": pooled.j_dof,
                "j_pvalue": pooled.j_pvalue,
                "rho": pooled.rho,
            },
            "mgiv": {
                "theta": _nan_to_none(mg.theta_bar),
                "ses": _nan_to_none(mg.ses),
                "n_used": mg.n_used.tolist(),
            },
            "r_x": fb.r_x if fb is not None else 0,
            "r_y": pooled.r_y,
            "q": pooled.q,
            "n": panel.n,
            "t_eff": tp.t_eff,
        }
        _write_json(out / "estimates.json", result)
        mg.unit_frame().to_csv(out / "unit_coefficients.csv", index=False)
        log_lines = [f"spanel {__version__}", f"seed={seed}", f"threads={threads}",
                     f"estimator={estimator}", f"n={panel.n}", f"t={panel.t}",
                     f"k={panel.k}", f"q={pooled.q}", f"r_x={result['r_x']}",
                     f"r_y={pooled.r_y}"]
        (out / "run.log").write_text("\n".join(log_lines) + "\n")
        inputs = {"data": data}
        if config_path:
            inputs["config"] = config_path
        if Path(weights_path).is_file():
            inputs["weights"] = weights_path
        _manifest(out, inputs,
                  {"estimator": estimator, "rx": rx, "ry": ry,
                   "no_defactor": no_defactor}, seed, threads,
                  ["estimates.json", "unit_coefficients.csv", "run.log"])

    _guard(out, run)


@main.command("recover-network")
@click.option("--data", required=True, type=click.Path(exists=False))
@click.option("--config", "config_path", type=click.Path(exists=False), default=None)
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.option("--max-links", default=None, type=int)
@click.option("--defactor/--no-defactor", default=False, show_default=True)
@_add_common
def recover_network_cmd(data, config_path, alpha, max_links, defactor,
                        out_dir, seed, threads):
    """Recover the spatial network from the data."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        cfg_in = IngestConfig.from_file(config_path) if config_path else IngestConfig()
        panel = load_panel(data, cfg_in)
        tp = build_transformed(panel, "unit_only")   # scan calibration
        fb = build_factor_basis(tp) if defactor else None
        cfg = BolmtConfig(alpha=alpha, max_links_per_row=max_links)
        net = recover_network(tp, cfg, fb)
        save_weights(net.w_hat, out / "w_hat.csv")
        net.edge_frame().to_csv(out / "edges.csv", index=False)
        stats_ = network_stats(net.w_hat)
        _write_json(out / "stats.json", {
            "density": net.density,
            "density_pct": 100.0 * net.density,
            "avg_links_per_unit": stats_.avg_out_links,
            "isolated_units": stats_.isolated_units,
            "n": panel.n,
            "alpha": alpha,
        })
        inputs = {"data": data}
        if config_path:
            inputs["config"] = config_path
        _manifest(out, inputs, {"alpha": alpha, "max_links": max_links,
                                "defactor": defactor}, seed, threads,
                  ["w_hat.csv", "edges.csv", "stats.json"])

    _guard(out, run)


@main.command("effects")
@click.option("--estimates", "estimates_path", required=True, type=click.Path(exists=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=False))
@click.option("--se-method", type=click.Choice(["delta", "sim", "none"]),
              default="delta", show_default=True)
@click.option("--draws", default=5000, show_default=True, type=int)
@_add_common
def effects_cmd(estimates_path, weights_path, se_method, draws, out_dir, seed, threads):
    """Direct/indirect/total effects from saved estimates."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        est = json.loads(Path(estimates_path).read_text())
        theta = np.asarray([np.nan if v is None else v for v in est["theta"]], float)
        w = load_weights(weights_path)
        if np.isnan(theta[1]):
            raise InputError("saved estimate has no spatial-lag coefficient")

        class _Est:
            pass

        holder = _Est()
        holder.theta = theta
        holder.vcov = np.asarray([[np.nan if v is None else v for v in row]
                                  for row in est["vcov"]], float)
        names = [n for n in est["names"] if n != "spatial_lag"]
        cov_names = names[1:]
        if se_method == "none" or w.kind == "time_varying":
            m = multiplier(w, float(theta[1]))
            table = average_effects(m, theta[2:], float(theta[0]), names=cov_names)
        else:
            table = effect_standard_errors(holder, w, method=se_method,
                                           draws=draws, seed=seed, names=cov_names)
        table.to_frame().to_csv(out / "effects.csv", index=False)
        payload = {
            "names": table.names,
            "direct": _nan_to_none(table.direct),
            "indirect": _nan_to_none(table.indirect),
            "total": _nan_to_none(table.total),
            "se_method": table.se_method,
            "time_varying": table.time_varying,
        }
        if table.se_direct is not None:
            payload["se_direct"] = _nan_to_none(table.se_direct)
            payload["se_indirect"] = _nan_to_none(table.se_indirect)
            payload["se_total"] = _nan_to_none(table.se_total)
        _write_json(out / "effects.json", payload)
        inputs = {"estimates": estimates_path}
        if Path(weights_path).is_file():
            inputs["weights"] = weights_path
        _manifest(out, inputs, {"se_method": se_method, "draws": draws},
                  seed, threads, ["effects.json", "effects.csv"])

    _guard(out, run)


@main.command("spill")
@click.option("--estimates", "estimates_path", required=True, type=click.Path(exists=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=False))
@click.option("--covariate", required=True, help="Covariate name from the estimates file.")
@click.option("--source-units", default=None, help="Comma-separated source units (spill-out).")
@click.option("--target-unit", default=None, help="Single target unit (spill-in).")
@_add_common
def spill_cmd(estimates_path, weights_path, covariate, source_units, target_unit,
              out_dir, seed, threads):
    """Spill-in / spill-out maps through the spatial multiplier."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        if (source_units is None) == (target_unit is None):
            raise InputError("give exactly one of --source-units / --target-unit")
        est = json.loads(Path(estimates_path).read_text())
        theta = np.asarray([np.nan if v is None else v for v in est["theta"]], float)
        names = est["names"]
        if covariate not in names:
            raise InputError(f"unknown covariate {covariate!r}; choices: {names}")
        beta_l = float(theta[names.index(covariate)])
        w = load_weights(weights_path)
        m = multiplier(w, float(theta[1]))
        if source_units is not None:
            sources = [s.strip() for s in source_units.split(",") if s.strip()]
            res = spill_out(m, beta_l, sources)
            df = pd.DataFrame({"unit": res.units, "value": res.spill,
                               "own": res.own, "total": res.total})
            mode = {"mode": "spill_out", "sources": sources}
        else:
            vec = spill_in(m, beta_l, target_unit)
            df = pd.DataFrame({"unit": w.unit_ids, "value": vec})
            mode = {"mode": "spill_in", "target": target_unit}
        df.to_csv(out / "spill.csv", index=False)
        _write_json(out / "spill.json", {**mode, "covariate": covariate,
                                         "units": list(w.unit_ids),
                                         "values": df["value"].tolist()})
        inputs = {"estimates": estimates_path}
        if Path(weights_path).is_file():
            inputs["weights"] = weights_path
        _manifest(out, inputs, {**mode, "covariate": covariate}, seed, threads,
                  ["spill.csv", "spill.json"])

    _guard(out, run)


@main.command("homophily")
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=False))
@click.option("--groups", "groups_path", required=True, type=click.Path(exists=False),
              help="CSV `unit,division`.")
@click.option("--permutations", "-b", default=10000, show_default=True, type=int)
@_add_common
def homophily_cmd(weights_path, groups_path, permutations, out_dir, seed, threads):
    """Permutation test of within-group link concentration."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        w = load_weights(weights_path)
        gdf = pd.read_csv(groups_path, dtype=str)
        groups = dict(zip(gdf.iloc[:, 0], gdf.iloc[:, 1]))
        res = homophily_test(w, groups, b=permutations, seed=seed)
        _write_json(out / "homophily.json", {
            "l_same": res.l_same, "l_total": res.l_total,
            "h_hat": res.h_hat, "h_null_mean": res.h_null_mean,
            "relative_homophily_index": res.rhi, "excess": res.excess,
            "p_value": res.p_value, "permutations": res.b, "seed": res.seed,
        })
        inputs = {"groups": groups_path}
        if Path(weights_path).is_file():
            inputs["weights"] = weights_path
        _manifest(out, inputs, {"permutations": permutations}, seed, threads,
                  ["homophily.json"])

    _guard(out, run)


@main.command("link-logit")
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=False))
@click.option("--bilateral", "bilateral_paths", multiple=True, required=True,
              type=click.Path(exists=False), help="Dense N x N covariate CSVs (repeatable).")
@click.option("--names", default=None, help="Comma-separated covariate names.")
@click.option("--correction", type=click.Choice(["none", "rare_events"]),
              default="rare_events", show_default=True)
@click.option("--log-offset", default=None, type=float,
              help="Offset before logging raw bilateral flows (default: use values as-is).")
@_add_common
def link_logit_cmd(weights_path, bilateral_paths, names, correction, log_offset,
                   out_dir, seed, threads):
    """Bias-corrected logit of link presence on bilateral covariates."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        w = load_weights(weights_path)
        mats = []
        for p in bilateral_paths:
            df = pd.read_csv(p, index_col=0)
            mat = df.to_numpy(dtype=float)
            if log_offset is not None:
                mat = bilateral_log_average(mat[:, :, None], offset=log_offset)
            mats.append(mat)
        nm = [s.strip() for s in names.split(",")] if names else None
        res = link_logit(w, mats, names=nm, correction=correction)
        _write_json(out / "link_logit.json", {
            "alpha_hat": res.alpha_hat,
            "pi_hat": res.pi_hat.tolist(),
            "ses": res.ses.tolist(),
            "p_values": res.p_values.tolist(),
            "odds_ratios": res.odds_ratios.tolist(),
            "n_links": res.n_links, "n_pairs": res.n_pairs,
            "n_used": res.n_used, "correction": res.correction,
            "names": res.names,
        })
        inputs = {f"bilateral_{i}": p for i, p in enumerate(bilateral_paths)}
        if Path(weights_path).is_file():
            inputs["weights"] = weights_path
        _manifest(out, inputs, {"correction": correction}, seed, threads,
                  ["link_logit.json"])

    _guard(out, run)


@main.command("simulate")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=False),
              help="JSON DGP spec: n, t, k, weights file, parameters.")
@_add_common
def simulate_cmd(spec_path, out_dir, seed, threads):
    """Draw a synthetic panel; writes the canonical long CSV plus the truth."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        raw = json.loads(Path(spec_path).read_text())
        w_path = raw.pop("weights")
        base = Path(spec_path).parent
        w_file = Path(w_path) if Path(w_path).is_absolute() else base / w_path
        w = load_weights(w_file)
        raw.setdefault("seed", seed)
        for key in ("delta", "psi", "beta"):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key]) if len(raw[key]) == 2 else np.asarray(raw[key])
        spec = DgpSpec(w_true=w, **raw)
        sim = simulate(spec)
        save_panel(sim.panel, out / "panel.csv")
        _write_json(out / "truth.json", {
            "delta": sim.truth.delta.tolist(),
            "psi": sim.truth.psi.tolist(),
            "beta": sim.truth.beta.tolist(),
            "seed": spec.seed,
        })
        save_weights(sim.truth.w, out / "w_true.csv")
        _write_json(out / "config.json", {
            "x_cols": sim.panel.covariate_names, "demean": "two_way",
        })
        _manifest(out, {"spec": spec_path, "weights": str(w_file)},
                  {"n": spec.n, "t": spec.t, "k": spec.k}, spec.seed, threads,
                  ["panel.csv", "truth.json", "w_true.csv", "config.json"])

    _guard(out, run)


@main.command("weights")
@click.option("--kind", type=click.Choice(["contiguity", "inverse_distance", "flow"]),
              required=True)
@click.option("--pairs", "pairs_path", default=None, type=click.Path(exists=False),
              help="Border pairs CSV (contiguity).")
@click.option("--units", "units_path", default=None, type=click.Path(exists=False),
              help="One unit label per line (contiguity).")
@click.option("--coords", "coords_path", default=None, type=click.Path(exists=False),
              help="`unit,lat,lon` CSV (inverse distance).")
@click.option("--percentile", default=10.0, show_default=True, type=float)
@click.option("--flows", "flows_path", default=None, type=click.Path(exists=False),
              help="Long CSV `from,to,time,flow` (flow weights).")
@click.option("--mode", type=click.Choice(["time_averaged", "time_varying"]),
              default="time_averaged", show_default=True)
@click.option("--standardize/--no-standardize", default=True, show_default=True)
@click.option("--count-threshold", default=0.0, show_default=True, type=float,
              help="Weight cutoff when counting links for the stats block.")
@_add_common
def weights_cmd(kind, pairs_path, units_path, coords_path, percentile, flows_path,
                mode, standardize, count_threshold, out_dir, seed, threads):
    """Build a weight matrix and report its density / average links."""
    out = Path(out_dir)

    def run():
        out.mkdir(parents=True, exist_ok=True)
        inputs = {}
        if kind == "contiguity":
            if not (pairs_path and units_path):
                raise InputError("contiguity needs --pairs and --units")
            units = [ln.strip() for ln in Path(units_path).read_text().splitlines()
                     if ln.strip()]
            w = contiguity_weights(load_pairs(pairs_path), units)
            inputs = {"pairs": pairs_path, "units": units_path}
        elif kind == "inverse_distance":
            if not coords_path:
                raise InputError("inverse_distance needs --coords")
            units, coords = load_coordinates(coords_path)
            w = inverse_distance_weights(coords, units, percentile_cutoff=percentile)
            inputs = {"coords": coords_path}
        else:
            if not flows_path:
                raise InputError("flow needs --flows")
            df = pd.read_csv(flows_path)
            units = sorted(set(df.iloc[:, 0].astype(str)) | set(df.iloc[:, 1].astype(str)))
            times = sorted(df.iloc[:, 2].unique())
            uidx = {u: i for i, u in enumerate(units)}
            tidx = {t: s for s, t in enumerate(times)}
            arr = np.zeros((len(units), len(units), len(times)))
            for _, row in df.iterrows():
                # flows[i, j, t]: inflow to i from j
                arr[uidx[str(row.iloc[1])], uidx[str(row.iloc[0])],
                    tidx[row.iloc[2]]] += float(row.iloc[3])
            w = flow_weights(arr, units, mode=mode)
            inputs = {"flows": flows_path}
        stats_raw = network_stats(w, threshold=count_threshold)
        if standardize:
            w = row_standardize(w)
        dest = out / ("w" if w.kind == "time_varying" else "w.csv")
        save_weights(w, dest)
        _write_json(out / "stats.json", {
            "kind": kind,
            "density": stats_raw.density,
            "density_pct": 100.0 * stats_raw.density,
            "avg_links_per_unit": stats_raw.avg_out_links,
            "isolated_units": stats_raw.isolated_units,
            "row_standardized": w.row_standardized,
            "n": w.n,
        })
        _manifest(out, inputs, {"kind": kind, "percentile": percentile,
                                "mode": mode, "standardize": standardize,
                                "count_threshold": count_threshold},
                  seed, threads, [dest.name, "stats.json"])

    _guard(out, run)


if __name__ == "__main__":
    main()
