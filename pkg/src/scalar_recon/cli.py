"""``recon`` command line: simulate, reconcile, sweep, hist, keyrate."""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .config import ExperimentConfig, parse_config
from .errors import ConfigError, ReconError
from .quantum import BASES, ChannelModel, ModulationConfig, RawSession, load_session, run_session
from .reconciliation import Alphabet, binomial_interval, reconcile_session
from .stats import RandomStream
from .tables import CsvTable, provenance, write_json, write_table

log = logging.getLogger("scalar_recon")

COMMANDS = ("simulate", "reconcile", "sweep", "hist", "keyrate")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# stream ids
SESSION_STREAM, RECON_STREAM, SWEEP_STREAM = 0, 1, 2
MAX_HIST_BINS = 2000


def _channels(cfg: ExperimentConfig):
    n1 = ChannelModel(cfg.n1_variance, cfg.n1_scale_transform, "N1")
    n2 = ChannelModel(cfg.n2_variance, cfg.n2_scale_transform, "N2")
    return n1, n2


def simulate_session(cfg: ExperimentConfig, n_units=None, stream=None) -> RawSession:
    n1, n2 = _channels(cfg)
    stream = stream or RandomStream(cfg.seed, SESSION_STREAM)
    s = run_session(ModulationConfig(cfg.modulation_variance), n1, n2, n_units or cfg.n_units,
                    stream, calibration=cfg.calibration, seed=cfg.seed)
    s.extra.update(transmittance=cfg.transmittance, excess_noise=cfg.excess_noise,
                   correlation=cfg.correlation)
    return s


def reconcile(cfg: ExperimentConfig, session: RawSession, d: int, stream=None):
    return reconcile_session(
        session, d, Alphabet(cfg.a, cfg.b), mode=cfg.granulation, method=cfg.method,
        rng=stream or RandomStream(cfg.seed, RECON_STREAM), spread=cfg.spread,
        var_x=cfg.var_x, var_x_prime=cfg.var_x_prime)


# --- subcommands -------------------------------------------------------------

def _session_table(s: RawSession) -> CsvTable:
    basis = np.array(BASES)[s.bases.astype(int)]
    rows = list(zip(range(s.n), basis.tolist(), s.alice_units.tolist(), s.bob_units.tolist()))
    return CsvTable(["index", "basis", "x_alice", "x_bob"], rows)


def cmd_simulate(cfg, stage: Path, ctx):
    s = simulate_session(cfg)
    write_table(_session_table(s), stage / "session.csv", ctx["comment"])
    write_json(s.metadata(), stage / "session.json", cfg.seed, ctx["hash"])


def _suffix(cfg, d):
    return "" if len(cfg.d_list) == 1 else f"_d{d}"


def cmd_reconcile(cfg, stage: Path, ctx):
    session = load_session(ctx["session"]) if ctx.get("session") else simulate_session(cfg)
    for d in cfg.d_list:
        if session.n < d:
            raise ReconError(f"reconcile: session has {session.n} units but d = {d} "
                             f"(precondition N >= d)")
        r = reconcile(cfg, session, d)
        sfx = _suffix(cfg, d)
        rep = r.report.to_json_dict()
        rep["d"] = d
        if r.report.predicted_pe is not None:
            rep["predicted_pe_interval_3sigma"] = list(
                binomial_interval(r.report.predicted_pe, r.report.blocks))
        write_json(rep, stage / f"report{sfx}.json", cfg.seed, ctx["hash"])
        nz = r.noise
        rows = list(zip(range(r.report.blocks), r.choices.tolist(), r.report.decisions.tolist(),
                        r.report.block_values.tolist(), nz.block_noise.tolist(),
                        nz.block_noise_bob.tolist(), nz.delta_block_ratio_of_sums.tolist()))
        write_table(CsvTable(["j", "choice", "decision", "u_prime_sum", "delta_j", "varsigma_j",
                              "delta_j_ratio_of_sums"], rows),
                    stage / f"noise{sfx}.csv", ctx["comment"])
        nb, dd = r.payload.shape
        jj, ii = np.divmod(np.arange(nb * dd), dd)
        wire = CsvTable(["j", "i", "payload"],
                        list(zip(jj.tolist(), ii.tolist(), r.payload.ravel().tolist())))
        write_table(wire, stage / f"wire{sfx}.csv", ctx["comment"])


def sweep_point(args):
    cfg, d, rep = args
    point = RandomStream(cfg.seed, SWEEP_STREAM, (d, rep))
    s = simulate_session(cfg, n_units=cfg.sweep_blocks * d, stream=point.child(0))
    r = reconcile(cfg, s, d, stream=point.child(1))
    lr = analysis.logical_channel_report(r)
    row = lr.as_row()
    row["ber"] = lr.ber
    return row


SWEEP_HEADER = ["d", "sigma_delta_sq", "snr_logical", "beta", "kurtosis", "ks_p"]


def cmd_sweep(cfg, stage: Path, ctx):
    d_values = cfg.sweep_d_list
    points = [(cfg, d, rep) for d in d_values for rep in range(cfg.replicates)]
    if cfg.jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(sweep_point, points))
    else:
        results = [sweep_point(p) for p in points]
    detail, summary = [], []
    for (_, d, rep), row in zip(points, results):
        detail.append([d, rep] + [row[k] for k in SWEEP_HEADER[1:]] + [row["ber"]])
    for d in d_values:
        rows = [row for (_, dd, _), row in zip(points, results) if dd == d]
        med = []
        for k in SWEEP_HEADER[1:]:
            vals = np.array([np.nan if row[k] is None else row[k] for row in rows], dtype=float)
            med.append(float(np.median(vals)))
        summary.append([d] + med)
    write_table(CsvTable(SWEEP_HEADER, summary), stage / "sweep.csv", ctx["comment"])
    write_table(CsvTable(["d", "replicate"] + SWEEP_HEADER[1:] + ["ber"], detail),
                stage / "sweep_replicates.csv", ctx["comment"])


def histogram_rows(name, values, bins):
    x = np.asarray(values, dtype=float).ravel()
    if bins == "fd":
        edges = np.histogram_bin_edges(x, bins="fd")
        if edges.size - 1 > MAX_HIST_BINS:
            log.warning("%s: Freedman-Diaconis asks for %d bins, capped at %d",
                        name, edges.size - 1, MAX_HIST_BINS)
            edges = np.histogram_bin_edges(x, bins=MAX_HIST_BINS)
    else:
        edges = np.histogram_bin_edges(x, bins=int(bins))
    counts, edges = np.histogram(x, bins=edges)
    widths = np.diff(edges)
    density = counts / (counts.sum() * widths)
    return [(name, float(edges[k]), float(edges[k + 1]), int(counts[k]), float(density[k]))
            for k in range(counts.size)]


def cmd_hist(cfg, stage: Path, ctx):
    session = load_session(ctx["session"]) if ctx.get("session") else simulate_session(cfg)
    r = reconcile(cfg, session, cfg.d)
    nz = r.noise
    quantities = [
        ("X", session.alice_units),
        ("C_X", r.cdf_alice),
        ("Delta", nz.delta_units),
        ("C_Delta", nz.cdf_delta_units),
        ("delta_unit", nz.unit_noise),
        ("delta_block", nz.block_noise),
        ("delta_block_ratio_of_sums", nz.delta_block_ratio_of_sums),
    ]
    rows = []
    for name, vals in quantities:
        rows.extend(histogram_rows(name, vals, cfg.hist_bins))
    write_table(CsvTable(["quantity", "bin_left", "bin_right", "count", "density"], rows),
                stage / "hist.csv", ctx["comment"])


def cmd_keyrate(cfg, stage: Path, ctx):
    rows = []
    for dist in cfg.distances_km:
        t = analysis.distance_to_transmittance(dist, cfg.fiber_loss_db_per_km)
        xi = analysis.excess_noise(cfg.modulation_variance, t)
        inputs = analysis.KeyRateInputs(t, cfg.modulation_variance, xi, cfg.entropy,
                                        cfg.fiber_loss_db_per_km)
        rows.append((dist, t, analysis.secret_key_rate(inputs)))
    comment = f"{ctx['comment']} entropy={cfg.entropy} loss_db_per_km={cfg.fiber_loss_db_per_km!r}"
    write_table(CsvTable(["distance_km", "T", "R"], rows), stage / "keyrate.csv", comment)


HANDLERS = {
    "simulate": cmd_simulate,
    "reconcile": cmd_reconcile,
    "sweep": cmd_sweep,
    "hist": cmd_hist,
    "keyrate": cmd_keyrate,
}


def run_command(cmd: str, cfg: ExperimentConfig, out_dir=None, session=None):
    """Run one subcommand, staging outputs so a failure leaves nothing behind.

    Returns the list of files written.
    """
    if cmd not in HANDLERS:
        raise ReconError(f"unknown command {cmd!r}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    cfg_hash = cfg.hash()
    ctx = {"hash": cfg_hash, "comment": provenance(cfg.seed, cfg_hash), "session": session}
    try:
        HANDLERS[cmd](cfg, stage, ctx)
        written = []
        for f in sorted(stage.iterdir()):
            target = out / f.name
            f.replace(target)
            written.append(target)
        return written
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _parse_d_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--d expects comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("--d needs at least one value")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recon", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--d", type=_parse_d_list, help="comma-separated block dimensions")
    p.add_argument("--method", choices=("scalar", "vector", "projection"))
    p.add_argument("--session", help="reuse a session CSV instead of simulating (reconcile, hist)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.method is not None:
        overrides["reconciliation.method"] = args.method
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.d is not None:
        key = "sweep.d_list" if args.command == "sweep" else "reconciliation.d"
        overrides[key] = args.d
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        label = "config syntax error" if exc.kind == "parse" else "config error"
        for v in exc.violations:
            print(f"{label}: {v}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        written = run_command(args.command, cfg, session=args.session)
    except (ReconError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
