"""Command-line driver for the phantom / simulate / reconstruct / evaluate /
Monte-Carlo pipeline.

Every subcommand writes a run manifest next to its outputs.  Exit codes:
0 success, 1 usage error, 2 data or contract error, 3 numerical failure.
All data outputs are deterministic for fixed inputs and seed; `--threads`
caps worker parallelism and never changes output bytes (the current
implementation evaluates sequentially).
"""

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__, analysis, encoding, fileio, qspace, solver

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_ints(text, n, flag):
    parts = text.split(",")
    if len(parts) != n:
        raise ValueError(f"{flag} expects {n} comma-separated integers")
    return tuple(int(p) for p in parts)


def _parse_floats(text, n, flag):
    parts = text.split(",")
    if len(parts) != n:
        raise ValueError(f"{flag} expects {n} comma-separated numbers")
    return tuple(float(p) for p in parts)


def _parse_snr(text):
    if text.strip().lower() == "inf":
        return float("inf")
    value = float(text)
    if not value > 0:
        raise ValueError("--snr must be positive or 'inf'")
    return value


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(path, subcommand, config, inputs, outputs, seed, started):
    manifest = {
        "subcommand": subcommand,
        "configuration": config,
        "inputs": inputs,
        "outputs": outputs,
        "master_seed": seed,
        "tool_version": __version__,
        "started": started,
        "finished": _timestamp(),
    }
    fileio._write_text(path, fileio._dumps(manifest) + "\n")


def _labels_to_volume(labels, voxel_size):
    return encoding.DwiVolumeSet(
        values=labels.astype(np.float64)[..., None], voxel_size=voxel_size
    )


def _volume_to_labels(volume):
    return np.rint(volume.values[..., 0]).astype(np.int16)


def cmd_phantom(args):
    started = _timestamp()
    design = fileio.read_gradients(args.gradients)
    dims = _parse_ints(args.dims, 3, "--dims")
    voxel = _parse_floats(args.voxel_size, 3, "--voxel-size")
    truth, labels = encoding.make_phantom(dims, voxel, design)
    fileio.write_volume(args.out, truth, description="synthetic ground truth")
    fileio.write_volume(
        f"{args.out}_labels", _labels_to_volume(labels, voxel),
        description="region labels",
    )
    _write_manifest(
        f"{args.out}_manifest.json",
        "phantom",
        {"dims": list(dims), "voxel_size": list(voxel)},
        {"gradients": args.gradients},
        {"truth": args.out, "labels": f"{args.out}_labels"},
        None,
        started,
    )
    return EXIT_OK


def _load_basis(args):
    if args.basis:
        return fileio.read_basis(args.basis)
    return encoding.default_basis(5)


def cmd_simulate(args):
    started = _timestamp()
    truth = fileio.read_volume(args.truth)
    design = fileio.read_gradients(args.gradients)
    basis = _load_basis(args)
    scheme = qspace.make_scheme(design, args.scheme_factor)
    snr = _parse_snr(args.snr)
    noise = encoding.NoiseSpec(target_snr=snr, seed=args.seed)
    y = encoding.simulate_acquisition(truth, basis, scheme, noise)
    fileio.ensure_dir(args.out_dir)
    outs = {}
    for k, yk in enumerate(y, start=1):
        stem = os.path.join(args.out_dir, f"y{k}")
        fileio.write_volume(stem, yk, description=f"thick-slice set, RF profile {k}")
        outs[f"y{k}"] = stem
    fileio.write_scheme(os.path.join(args.out_dir, "scheme.json"), scheme, args.scheme_factor)
    fileio.write_basis(os.path.join(args.out_dir, "basis.json"), basis)
    _write_manifest(
        os.path.join(args.out_dir, "manifest.json"),
        "simulate",
        {"scheme_factor": args.scheme_factor, "snr": snr},
        {"truth": args.truth, "gradients": args.gradients, "basis": args.basis},
        outs,
        args.seed,
        started,
    )
    return EXIT_OK


def cmd_reconstruct(args):
    started = _timestamp()
    cfg = fileio.read_config(args.config)
    scheme = fileio.read_scheme(os.path.join(args.acq_dir, "scheme.json"))
    basis = fileio.read_basis(os.path.join(args.acq_dir, "basis.json"))
    design = fileio.read_gradients(args.gradients)
    y = [
        fileio.read_volume(os.path.join(args.acq_dir, f"y{k}"))
        for k in range(1, scheme.n_rf + 1)
    ]
    if args.method == "tikhonov":
        recon = solver.tikhonov_init(y, basis, scheme, cfg.tikhonov_mu)
        report = solver.ReconReport(iterations_run=0)
    else:
        from .ridgelets import build_dictionary

        dictionary = build_dictionary(design)
        recon, report = solver.reconstruct(y, basis, scheme, dictionary, cfg)
    fileio.write_volume(args.out, recon, description=f"reconstruction ({args.method})")
    fileio._write_text(
        f"{args.out}_report.json",
        fileio._dumps(
            {
                "iterations_run": report.iterations_run,
                "rel_change_history": report.rel_change_history,
                "objective_history": report.objective_history,
                "wall_time": report.wall_time,
            }
        )
        + "\n",
    )
    _write_manifest(
        f"{args.out}_manifest.json",
        "reconstruct",
        {"method": args.method, "config": args.config},
        {"acq_dir": args.acq_dir, "gradients": args.gradients},
        {"recon": args.out, "report": f"{args.out}_report.json"},
        None,
        started,
    )
    return EXIT_OK


def cmd_evaluate(args):
    started = _timestamp()
    recon = fileio.read_volume(args.recon)
    truth = fileio.read_volume(args.truth)
    labels = _volume_to_labels(fileio.read_volume(args.labels))
    design = fileio.read_gradients(args.gradients)
    from .ridgelets import build_dictionary

    dictionary = build_dictionary(design)
    pipe = analysis._OdfPipeline(dictionary)
    wm = np.isin(labels, analysis.WM_LABELS)
    truth_peaks = pipe.peaks(truth.values[wm])
    res = analysis._evaluate_realization(
        recon.values, truth, labels, design, pipe, truth_peaks
    )
    res.pop("_fa_wm")
    rows = [("eval", metric, "value", value) for metric, value in sorted(res.items())]
    fileio.write_summary_csv(args.out_csv, rows)
    nmse_map = analysis.nmse(recon.values, truth.values)
    nmse_map = np.where(np.isfinite(nmse_map), nmse_map, 0.0)
    stem = os.path.splitext(args.out_csv)[0] + "_nmse"
    fileio.write_volume(
        stem,
        encoding.DwiVolumeSet(nmse_map[..., None], truth.voxel_size),
        description="per-voxel NMSE map (masked voxels set to 0)",
    )
    _write_manifest(
        os.path.splitext(args.out_csv)[0] + "_manifest.json",
        "evaluate",
        {},
        {"recon": args.recon, "truth": args.truth, "labels": args.labels,
         "gradients": args.gradients},
        {"csv": args.out_csv, "nmse_map": stem},
        None,
        started,
    )
    return EXIT_OK


def cmd_mc(args):
    started = _timestamp()
    truth = fileio.read_volume(args.truth)
    labels = _volume_to_labels(fileio.read_volume(args.labels))
    design = fileio.read_gradients(args.gradients)
    cfg = fileio.read_config(args.config)
    basis = _load_basis(args)
    snr = _parse_snr(args.snr)
    factors = [int(f) for f in args.factors.split(",")]
    noise = encoding.NoiseSpec(target_snr=snr, seed=args.seed)
    summary = analysis.run_monte_carlo(
        truth,
        labels,
        design,
        basis,
        factors,
        noise,
        cfg,
        args.n_mc,
        include_hr=args.include_hr,
    )
    fileio.ensure_dir(args.out_dir)
    csv_path = os.path.join(args.out_dir, "summary.csv")
    fileio.write_summary_csv(csv_path, analysis.summary_rows(summary))
    realizations = [
        {"scheme": label, "realization": i, "seed": args.seed + i}
        for label in summary.schemes
        for i in range(args.n_mc)
    ]
    _write_manifest(
        os.path.join(args.out_dir, "manifest.json"),
        "mc",
        {
            "factors": factors,
            "include_hr": args.include_hr,
            "n_mc": args.n_mc,
            "snr": snr,
            "config": args.config,
            "realizations": realizations,
        },
        {"truth": args.truth, "labels": args.labels, "gradients": args.gradients},
        {"summary": csv_path},
        args.seed,
        started,
    )
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="dwisr", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("phantom", help="write the synthetic ground truth")
    p.add_argument("--dims", required=True, help="nx,ny,nz")
    p.add_argument("--voxel-size", default="1.0,1.0,1.0")
    p.add_argument("--gradients", required=True)
    p.add_argument("--out", required=True, help="output volume stem")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="simulate an undersampled acquisition")
    p.add_argument("--truth", required=True, help="ground-truth volume stem")
    p.add_argument("--gradients", required=True)
    p.add_argument("--basis", default=None, help="encoding basis JSON")
    p.add_argument("--scheme-factor", type=int, required=True)
    p.add_argument("--snr", default="20", help="target b0 SNR, or 'inf'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct thin slices")
    p.add_argument("--acq-dir", required=True)
    p.add_argument("--gradients", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=("gslider-sr", "tikhonov"), default="gslider-sr")
    p.add_argument("--out", required=True, help="output volume stem")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="compute metrics against ground truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--gradients", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mc", help="Monte-Carlo study over undersampling schemes")
    p.add_argument("--truth", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--gradients", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--basis", default=None)
    p.add_argument("--factors", default="2,3,4,5")
    p.add_argument("--include-hr", action="store_true")
    p.add_argument("--n-mc", type=int, default=20)
    p.add_argument("--snr", default="20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except solver.NumericalFailure as exc:
        print(f"dwisr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as exc:
        print(f"dwisr: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
