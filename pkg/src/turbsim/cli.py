"""Command-line driver.

    turbsim <command> [--config PATH] [--seed U64] [--out DIR] [--mode M]
                      [--frames N] [--verify-level L] [--workers N]

Commands: config, screen, splitstep, zsim, simulate, basis, restore, verify.
Exit codes: 0 success, 1 configuration error, 2 input/output error,
3 verification failure.
"""

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import criteria, io
from ._util import ConfigError
from .config import describe, load_config
from .psfbasis import (BasisConfig, P2SHyper, fit_pca, generate_psf_dataset, p2s_train)
from .restore import DeconvConfig, FrameStack, blind_deconvolve, lucky_fuse, reference_frame
from .scenes import natural_scene, point_grid
from .screens import ScreenSpec, empirical_structure_function, make_screen

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3


class VerificationFailure(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers

def _out(cfg, name):
    d = cfg["output", "dir"]
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


def _meta(cfg, command, **extra):
    m = cfg.metadata()
    m["command"] = command
    m.update({k: str(v) for k, v in extra.items()})
    return m


def _scene(cfg):
    src = cfg["sim", "scene"]
    H, W, seed = cfg["sim", "height"], cfg["sim", "width"], cfg["sim", "seed"]
    if src == "natural":
        return natural_scene(H, W, seed)
    if src == "points":
        return point_grid(H, W, 16)
    if not os.path.exists(src):
        raise FileNotFoundError(f"scene file {src!r} not found")
    if src.lower().endswith(".pgm"):
        return io.read_pgm(src) / 65535.0
    arr, _ = io.read_container(src)
    if arr.ndim != 2:
        raise io.FormatError(f"{src}: scene container must be 2-D")
    return arr


def _input(cfg, section, key, default_name):
    path = cfg[section, key] or os.path.join(cfg["output", "dir"], default_name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"required input {path!r} not found")
    return path


def _write_frames(cfg, command, ideal, frames, extra=None):
    meta = _meta(cfg, command, **(extra or {}))
    io.write_container(_out(cfg, "ideal.tsim"), ideal, meta)
    io.write_container(_out(cfg, "frames.tsim"), frames, meta)
    io.write_pgm(_out(cfg, "ideal.pgm"), ideal)
    for t, f in enumerate(frames):
        io.write_pgm(_out(cfg, f"frame_{t:04d}.pgm"), f)


def _map_frames(fn, args, workers):
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, args))
    return [fn(a) for a in args]


# ----------------------------------------------------------------- commands

def cmd_config(cfg, args):
    sys.stdout.write(describe())
    return []


def cmd_screen(cfg, args):
    """Phase screens for the whole path (plane-wave r0) and their structure function."""
    o = cfg.optical
    if not np.isfinite(o.r0):
        raise ConfigError("screens need turbulence (cn2 > 0)")
    r0 = o.with_(wave_kind="plane").r0
    N, dx, T = o.N, o.grid_dx, cfg["sim", "frames"]
    spec = ScreenSpec(r0)
    screens = [make_screen(N, dx, spec, cfg["sim", "seed"], (t,), cfg["sim", "subharmonics"])
               for t in range(T)]
    meta = _meta(cfg, "screen", dx=repr(dx), r0=repr(r0))
    paths = [_out(cfg, "screens.tsim"), _out(cfg, "screen_0000.pgm")]
    io.write_container(paths[0], np.stack([s.phase for s in screens]), meta)
    io.write_pgm(paths[1], screens[0].phase)
    if T >= 2:
        sf = empirical_structure_function(screens, max_lag=N // 4)
        from .atmosphere import phase_structure_function
        paths.append(_out(cfg, "structure.csv"))
        io.write_csv(paths[-1], ["r_m", "empirical", "theory"],
                     [sf.r, sf.D, phase_structure_function(sf.r, r0)])
    return paths


def _splitstep_one(job):
    ideal, o, seed, t, sim = job
    from .pipeline import splitstep_frame
    img, _ = splitstep_frame(ideal, o, seed, t, sim["psf_stride"], sim["screens"],
                             sim["kernel_size"], sim["boundary"], sim["subharmonics"])
    return img


def cmd_splitstep(cfg, args):
    ideal = _scene(cfg)
    o, seed, sim = cfg.optical, cfg["sim", "seed"], dict(cfg.values["sim"])
    jobs = [(ideal, o, seed, t, sim) for t in range(sim["frames"])]
    frames = np.stack(_map_frames(_splitstep_one, jobs, args.workers))
    _write_frames(cfg, "splitstep", ideal, frames)
    return [_out(cfg, "frames.tsim")]


def _zsim_one(job):
    ideal, o, basis, model, seed, t, sim = job
    from .pipeline import zernike_frame
    fr = zernike_frame(ideal, o, basis, seed, t, sim["beta_path"], model, sim["boundary"])
    return fr.image, fr.tilt.d


def cmd_zsim(cfg, args):
    ideal = _scene(cfg)
    basis, _ = io.load_basis(_input(cfg, "basis", "file", "basis.tsim"))
    model = None
    if cfg["sim", "beta_path"] == "p2s":
        model, _ = io.load_p2s(_p2s_path(cfg))
    o, seed, sim = cfg.optical, cfg["sim", "seed"], dict(cfg.values["sim"])
    jobs = [(ideal, o, basis, model, seed, t, sim) for t in range(sim["frames"])]
    res = _map_frames(_zsim_one, jobs, args.workers)
    frames = np.stack([r[0] for r in res])
    _write_frames(cfg, "zsim", ideal, frames, {"basis_M": basis.M, "basis_K": basis.K})
    io.write_container(_out(cfg, "tilts.tsim"), np.stack([r[1] for r in res]), _meta(cfg, "zsim"))
    return [_out(cfg, "frames.tsim"), _out(cfg, "tilts.tsim")]


def _p2s_path(cfg):
    """The regressor lives next to the basis file."""
    b = cfg["basis", "file"] or os.path.join(cfg["output", "dir"], "basis.tsim")
    path = os.path.join(os.path.dirname(b) or ".", "p2s.tsim")
    if not os.path.exists(path):
        raise FileNotFoundError(f"required input {path!r} not found")
    return path


def cmd_simulate(cfg, args):
    return (cmd_zsim if cfg["sim", "mode"] == "zernike" else cmd_splitstep)(cfg, args)


def cmd_basis(cfg, args):
    b = cfg.values["basis"]
    bcfg = BasisConfig(b["zernike_modes"], b["pupil"], 2, 0.999, b["kernel"])
    ds = generate_psf_dataset(bcfg, b["count"], (b["dr0_min"], b["dr0_max"]), cfg["sim", "seed"])
    basis = fit_pca(ds, min(b["modes"], len(ds), ds.K ** 2))
    meta = _meta(cfg, "basis")
    paths = [_out(cfg, "basis.tsim"), _out(cfg, "explained.csv"), _out(cfg, "kernels.pgm")]
    io.save_basis(paths[0], basis, meta)
    io.write_csv(paths[1], ["modes", "explained"], [np.arange(1, basis.M + 1), basis.explained])
    show = np.concatenate([basis.mean[None], basis.kernels[:7]])
    io.write_pgm(paths[2], np.concatenate([k / np.abs(k).max() for k in show], axis=1))
    if b["train_p2s"]:
        n_in = bcfg.n_modes - 2
        hyper = P2SHyper(widths=(n_in, n_in, 100, basis.M), epochs=b["epochs"],
                         seed=cfg["sim", "seed"])
        model = p2s_train(ds, basis, hyper)
        paths.append(_out(cfg, "p2s.tsim"))
        io.save_p2s(paths[-1], model, meta)
    return paths


def cmd_restore(cfg, args):
    r = cfg.values["restore"]
    arr, meta = io.read_container(_input(cfg, "restore", "input", "frames.tsim"))
    stack = FrameStack(arr)
    ref = reference_frame(stack, r["reference"], r["patch"], r["stride"])
    fused = lucky_fuse(stack, ref, patch=r["patch"], stride=r["stride"])
    outs = [ref, fused.image]
    paths = [_out(cfg, "reference.pgm"), _out(cfg, "fused.pgm")]
    io.write_pgm(paths[0], ref)
    io.write_pgm(paths[1], fused.image)
    extra = {"degenerate_patches": len(fused.degenerate)}
    if r["deconvolve"]:
        basis, _ = io.load_basis(_input(cfg, "basis", "file", "basis.tsim"))
        dc = DeconvConfig(lam=r["lam"], gamma=r["gamma"], outer=r["outer"])
        res = blind_deconvolve(fused.image, basis, dc)
        outs.append(res.J)
        paths += [_out(cfg, "restored.pgm"), _out(cfg, "kernel.pgm"), _out(cfg, "objective.csv")]
        io.write_pgm(paths[-3], res.J)
        io.write_pgm(paths[-2], res.kernel)
        io.write_csv(paths[-1], ["iteration", "objective"],
                     [np.arange(len(res.objective)), np.asarray(res.objective)])
        extra["kernel_clipped_mass"] = repr(res.clipped_mass)
    paths.append(_out(cfg, "restored.tsim"))
    io.write_container(paths[-1], np.stack(outs), _meta(cfg, "restore", **extra))
    return paths


def _check_hashes(cfg):
    for path in filter(None, (p.strip() for p in cfg["verify", "inputs"].split(","))):
        if not os.path.exists(path):
            raise FileNotFoundError(f"verify input {path!r} not found")
        _, meta = io.read_container(path)
        h = meta.get("config_hash")
        if h != cfg.hash:
            raise ConfigError(f"{path} was produced with config hash {h}, current is {cfg.hash}")


def cmd_verify(cfg, args):
    _check_hashes(cfg)
    include = None
    if args.checks:
        try:
            include = [int(c) for c in args.checks.split(",")]
        except ValueError:
            raise ConfigError(f"--checks must be a comma-separated list of numbers, got {args.checks!r}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = criteria.run_all(cfg.optical, cfg["verify", "level"], cfg["sim", "seed"], include)
    paths = []
    for r in results:
        print(r.line())
        for name, (header, cols) in r.curves.items():
            paths.append(_out(cfg, f"{name}.csv"))
            io.write_csv(paths[-1], header, cols)
        for name, img in r.images.items():
            paths.append(_out(cfg, f"{name}.pgm"))
            io.write_pgm(paths[-1], img)
    paths.append(_out(cfg, "summary.csv"))
    io.write_csv(paths[-1], ["criterion", "name", "status", "metric", "threshold", "detail"],
                 [[r.number for r in results], [r.name for r in results],
                  [r.status for r in results], [float(r.metric) for r in results],
                  [float(r.threshold) for r in results], [r.detail for r in results]])
    paths.append(_out(cfg, "summary.json"))
    with open(paths[-1], "w", encoding="utf-8") as f:
        json.dump({"config_hash": cfg.hash, "level": cfg["verify", "level"],
                   "criteria": [{"criterion": r.number, "name": r.name, "status": r.status,
                                 "metric": float(r.metric), "threshold": float(r.threshold),
                                 "detail": r.detail} for r in results]}, f, indent=1)
    failed = [r for r in results if r.status == "fail"]
    if failed:
        raise VerificationFailure("failed: " + ", ".join(f"{r.number} ({r.name})" for r in failed))
    return paths


COMMANDS = {
    "config": cmd_config, "screen": cmd_screen, "splitstep": cmd_splitstep, "zsim": cmd_zsim,
    "simulate": cmd_simulate, "basis": cmd_basis, "restore": cmd_restore, "verify": cmd_verify,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors, not argparse's default code 2
        self.print_usage(sys.stderr)
        print(f"configuration error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="turbsim", description="Turbulence imaging simulator.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help="top-level seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=("splitstep", "zernike"), help="simulator for 'simulate'")
    p.add_argument("--frames", type=int, help="number of frames")
    p.add_argument("--verify-level", choices=("fast", "full"), dest="verify_level")
    p.add_argument("--checks", help="verify: comma-separated criterion numbers (default all)")
    p.add_argument("--workers", type=int, default=1, help="processes for frame generation")
    return p


def resolve(args):
    cfg = load_config(args.config) if args.config else load_config()
    for value, sec, key in ((args.seed, "sim", "seed"), (args.out, "output", "dir"),
                            (args.mode, "sim", "mode"), (args.frames, "sim", "frames"),
                            (args.verify_level, "verify", "level")):
        if value is not None:
            cfg.set(sec, key, value)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config and not os.path.exists(args.config):
            raise FileNotFoundError(f"config file {args.config!r} not found")
        cfg = resolve(args)
        for path in COMMANDS[args.command](cfg, args):
            print(path)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except VerificationFailure as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
