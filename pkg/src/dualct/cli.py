"""Command-line pipeline: phantom -> simulate -> init -> reconstruct -> metrics.

Every command reads the YAML run config, writes its declared artifacts
into the output directory, and prints a one-line summary. Exit codes:
0 success, 2 config error, 3 I/O error, 4 numerical/solver error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, metrics as metrics_mod
from .errors import ConfigError, FormatError, NumericalError, SolverError
from .objective import DualState, ProblemSpec
from .regularizer import make_random_weights, make_tv_weights, save_weights
from .simdata import initialize, make_phantom, simulate_measurement
from .solver import run as solver_run
from .tomo import Sinogram, fbp_reconstruct, zero_fill_views

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class _Setup:
    """Everything derivable from one run config."""

    def __init__(self, config_path):
        self.config_path = Path(config_path)
        self.cfg = io.load_config(self.config_path)
        self.geometry = io.geometry_from_config(self.cfg["geometry"])
        self.mask = io.mask_from_config(self.cfg.get("mask", {"n_keep": self.geometry.n_views_full}),
                                        self.geometry.n_views_full)
        self.noise = io.noise_from_config(self.cfg.get("noise"))
        regs = self.cfg.get("regularizers", {})
        self.image_weights = io.weights_from_config(regs.get("image"), "image")
        self.sino_weights = io.weights_from_config(regs.get("sinogram"), "sinogram")
        self.lam = float(self.cfg.get("lambda", 10.0))
        self.params = io.solver_params_from_config(self.cfg.get("solver"),
                                                   self.cfg.get("mode"))
        self.out_dir = Path(self.cfg.get("output", "."))

    def phantom_spec(self):
        return io.phantom_from_config(self.cfg.get("phantom", {}), self.geometry.grid)

    def out(self, name) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def write_manifest(self, command):
        manifest = {
            "command": command,
            "config": str(self.config_path),
            "config_sha256": io.config_hash(self.config_path),
            "noise_seed": self.noise.seed,
            "versions": {"dualct": __version__, "numpy": np.__version__},
        }
        with open(self.out(f"manifest_{command}.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_sparse(setup: _Setup) -> Sinogram:
    return io.load_sinogram(setup.out("measured.f64"), setup.geometry)


def cmd_phantom(setup: _Setup) -> str:
    img = make_phantom(setup.phantom_spec())
    io.save_image(setup.out("phantom.f64"), img)
    io.export_pgm(setup.out("phantom.pgm"), img.values)
    return f"phantom {img.grid.nx}x{img.grid.ny} -> {setup.out('phantom.f64')}"


def cmd_simulate(setup: _Setup) -> str:
    img = io.load_image(setup.out("phantom.f64"), setup.geometry.grid)
    s, z_true = simulate_measurement(img, setup.geometry, setup.mask, setup.noise)
    io.save_sinogram(setup.out("measured.f64"), s)
    io.save_sinogram(setup.out("sino_full.f64"), z_true)
    return (f"simulated {s.n_views}/{setup.geometry.n_views_full} views "
            f"x {setup.geometry.n_dets} dets (noise: {setup.noise.model})")


def cmd_init(setup: _Setup) -> str:
    state = initialize(_load_sparse(setup), setup.geometry, setup.mask)
    io.save_image(setup.out("x0.f64"), state.x)
    io.save_sinogram(setup.out("z0.f64"), state.z)
    return f"initialized x0/z0 -> {setup.out_dir}"


def cmd_fbp(setup: _Setup, window="ram-lak") -> str:
    sparse = _load_sparse(setup)
    img = fbp_reconstruct(zero_fill_views(sparse), setup.geometry, window=window)
    io.save_image(setup.out("fbp.f64"), img)
    io.export_pgm(setup.out("fbp.pgm"), img.values)
    return f"FBP ({window}, zero-filled sparse views) -> {setup.out('fbp.f64')}"


def cmd_reconstruct(setup: _Setup) -> str:
    x0_path = setup.out("x0.f64")
    if x0_path.exists():
        x0 = io.load_image(x0_path, setup.geometry.grid)
        z0 = io.load_sinogram(setup.out("z0.f64"), setup.geometry)
        state0 = DualState(x0, z0)
    else:
        state0 = initialize(_load_sparse(setup), setup.geometry, setup.mask)
    spec = ProblemSpec(setup.geometry, setup.mask, _load_sparse(setup),
                       lam=setup.lam, image_weights=setup.image_weights,
                       sino_weights=setup.sino_weights)
    try:
        final, log = solver_run(spec, state0, setup.params)
    except SolverError as exc:
        if exc.log is not None:
            exc.log.write_csv(setup.out("iterations.csv"))
            exc.log.write_json(setup.out("iterations.json"))
        raise
    io.save_image(setup.out("recon.f64"), final.x)
    io.export_pgm(setup.out("recon.pgm"), final.x.values)
    io.save_sinogram(setup.out("recon_sino.f64"), final.z)
    log.write_csv(setup.out("iterations.csv"))
    log.write_json(setup.out("iterations.json"))
    setup.write_manifest("reconstruct")
    last = log.records[-1] if log.records else None
    tail = (f"{len(log)} iters, final grad {last.grad_norm:.3e}, eps {last.eps:.3e}"
            if last else "0 iters")
    return f"reconstruction done ({tail}) -> {setup.out('recon.f64')}"


def cmd_metrics(test_path, ref_path, data_range=None, out_path=None) -> str:
    test, _ = io.load_array(test_path)
    ref, _ = io.load_array(ref_path)
    rep = metrics_mod.report(test, ref, data_range=data_range)
    if out_path:
        rep.write_json(out_path)
    psnr_txt = "inf" if rep.psnr_db == float("inf") else f"{rep.psnr_db:.4f}"
    return f"psnr {psnr_txt} dB, ssim {rep.ssim:.6f} (range {rep.data_range:g})"


def cmd_weights(kind, out_path, domain="image", seed=0) -> str:
    if kind == "tv":
        stack = make_tv_weights(domain)
    elif kind == "random":
        kernel = (3, 3) if domain == "image" else (3, 15)
        stack = make_random_weights(seed, kernel=kernel)
    else:
        raise ConfigError(f"unknown weight kind {kind!r}")
    save_weights(stack, out_path)
    return f"{kind} weights ({stack.n_layers} layers, {stack.out_channels} ch) -> {out_path}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualct",
                                     description="Dual-domain sparse-view CT reconstruction")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("phantom", "simulate", "init", "reconstruct"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)

    p = sub.add_parser("fbp")
    p.add_argument("--config", required=True)
    p.add_argument("--window", default="ram-lak", choices=["ram-lak", "hann"])

    p = sub.add_parser("metrics")
    p.add_argument("--test", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--data-range", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("weights")
    p.add_argument("--kind", required=True, choices=["tv", "random"])
    p.add_argument("--out", required=True)
    p.add_argument("--domain", default="image", choices=["image", "sinogram"])
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "metrics":
            summary = cmd_metrics(args.test, args.ref, args.data_range, args.out)
        elif args.command == "weights":
            summary = cmd_weights(args.kind, args.out, args.domain, args.seed)
        else:
            setup = _Setup(args.config)
            if args.command == "fbp":
                summary = cmd_fbp(setup, window=args.window)
            else:
                summary = {"phantom": cmd_phantom, "simulate": cmd_simulate,
                           "init": cmd_init, "reconstruct": cmd_reconstruct}[args.command](setup)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileNotFoundError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
