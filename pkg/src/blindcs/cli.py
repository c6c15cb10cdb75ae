"""``blindcs`` command line: simulate, reconstruct, denoise, inpaint, eval.

Every option can also come from a ``--config`` file of ``key = value`` lines
(keys are the option names with dashes replaced by underscores); options on
the command line win.  Each command writes its resolved configuration to
``config.txt`` in the output directory.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .core import Datacube
from .errors import NumericalError
from .evalkit import evaluate, psnr
from .fileio import CubeFile, RunConfig, read_cube, read_image, write_cube, write_png
from .model import InferenceOpts
from .recon import ReconJob, default_opts, run_job
from .scenes import rgb_projection, synthetic_cube
from .sensing import CodeCube, Measurement, add_noise, forward, make_slm_code, random_cassi_code

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _inference_args(p):
    p.add_argument("--inference", choices=["gibbs", "vb"])
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--k", type=int, help="dictionary size (default 64)")
    p.add_argument("--patch", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--prune", type=float, help="relative atom-weight pruning threshold")
    p.add_argument("--final-sample", dest="final_sample", action="store_const", const=True)
    p.add_argument("--vb-phi-inverse", dest="vb_phi_inverse", action="store_const", const=True)
    p.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindcs", description="Blind compressive sensing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out")

    p = sub.add_parser("simulate", help="simulate a coded snapshot")
    common(p)
    p.add_argument("--scene", choices=["synthetic"])
    p.add_argument("--truth", help="truth cube file (instead of --scene)")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--nl", type=int)
    p.add_argument("--code", choices=["cassi-bernoulli", "slm"])
    p.add_argument("--noise-alpha0", dest="noise_alpha0", type=float)
    p.add_argument("--rgb", action="store_const", const=True, help="also write an RGB side image")

    p = sub.add_parser("reconstruct", help="invert a coded snapshot")
    common(p)
    p.add_argument("--measurement")
    p.add_argument("--code", dest="code_file")
    p.add_argument("--side-rgb", dest="side_rgb")
    p.add_argument("--truth")
    _inference_args(p)

    for name in ("denoise", "inpaint"):
        p = sub.add_parser(name, help=f"{name} an 8-bit image")
        common(p)
        p.add_argument("--input")
        p.add_argument("--truth")
        _inference_args(p)
        if name == "denoise":
            p.add_argument("--corrupt", action="store_const", const=True)
            p.add_argument("--sigma", type=float)
        else:
            p.add_argument("--observed-ratio", dest="observed_ratio", type=float)
            p.add_argument("--mask")

    p = sub.add_parser("eval", help="compare a reconstruction with the truth")
    common(p)
    p.add_argument("--recon")
    p.add_argument("--truth")
    p.add_argument("--region", action="append", help="row,col,height,width (repeatable)")
    p.add_argument("--peak", type=float)
    return parser


def _resolve(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "region")}
    if getattr(args, "region", None):
        flags["regions"] = ";".join(args.region)
    return base.merged(flags)


def _need(cfg, key):
    v = cfg.get(key)
    if v is None:
        raise _Fail(EXIT_INVALID, f"missing required setting --{key.replace('_', '-')}")
    return v


def _outdir(cfg):
    out = cfg.get("out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _opts(cfg, task) -> InferenceOpts:
    kind = cfg.get("inference", "vb")
    over = {"K": cfg.get("k", 64), "seed": cfg.get("seed", 0), "threads": cfg.get("threads", 1),
            "prune_threshold": cfg.get("prune", 0.0), "final_sample": cfg.get("final_sample", False),
            "phi_inverse": cfg.get("vb_phi_inverse", False), "tol": cfg.get("tol")}
    if cfg.get("iters") is not None:
        over["iterations"] = cfg.get("iters")
    if cfg.get("burn_in") is not None:
        over["burn_in"] = cfg.get("burn_in")
    return default_opts(task, kind, **over)


def _write_trace(trace, path):
    trace.to_csv(path)


def cmd_simulate(cfg: RunConfig):
    out = _outdir(cfg)
    seed = cfg.get("seed", 0)
    if cfg.get("truth"):
        truth = read_cube(cfg.get("truth")).to_cube()
    else:
        if cfg.get("scene", "synthetic") != "synthetic":
            raise _Fail(EXIT_INVALID, "unknown scene")
        truth = synthetic_cube(cfg.get("nx", 64), cfg.get("ny", 64), cfg.get("nl", 8), [seed, 1])
    nx, ny, nl = truth.shape
    kind = cfg.get("code", "cassi-bernoulli")
    if kind == "cassi-bernoulli":
        code = random_cassi_code(nx, ny, nl, [seed, 2])
    elif kind == "slm":
        code = make_slm_code([seed, 2], nx, ny, nl)
    else:
        raise _Fail(EXIT_INVALID, f"unknown code {kind!r}")
    # simulate from the float32 values that go into the files, so the written
    # truth and code reproduce the written measurement exactly
    truth = Datacube(truth.data.astype(np.float32).astype(float), truth.wavelengths)
    code = CodeCube(code.codes.astype(np.float32).astype(float), code.kind)
    meas = forward(truth, code)
    alpha0 = cfg.get("noise_alpha0", float("inf"))
    meas = add_noise(meas, alpha0, [seed, 3])
    write_cube(os.path.join(out, "truth.hsdc"), truth)
    write_cube(os.path.join(out, "code.hsdc"), CubeFile.from_cube(code.codes, {"kind": code.kind}))
    write_cube(os.path.join(out, "measurement.hsdc"),
               CubeFile.from_cube(meas.image, {"noise_alpha0": repr(float(alpha0))}))
    if cfg.get("rgb", False):
        write_cube(os.path.join(out, "rgb.hsdc"), rgb_projection(truth))
    return out


def _load_rgb(path):
    if path.endswith(".hsdc"):
        return read_cube(path).data.astype(float)
    return read_image(path)


def cmd_reconstruct(cfg: RunConfig):
    out = _outdir(cfg)
    meas_file = read_cube(_need(cfg, "measurement"))
    code_file = read_cube(_need(cfg, "code_file"))
    if meas_file.data.shape[2] != 1:
        raise _Fail(EXIT_INVALID, "measurement file must have a single channel")
    code = CodeCube(code_file.data.astype(float), code_file.meta.get("kind", "custom"))
    rgb = _load_rgb(cfg.get("side_rgb")) if cfg.get("side_rgb") else None
    meas = Measurement(meas_file.data[:, :, 0].astype(float), side_rgb=rgb)
    truth = read_cube(cfg.get("truth")).to_cube() if cfg.get("truth") else None
    job = ReconJob("cs_hyperspectral", meas, code=code, opts=_opts(cfg, "cs_hyperspectral"),
                   patch=cfg.get("patch", 8), stride=cfg.get("stride", 2),
                   wavelengths=truth.wavelengths if truth is not None else None)
    res = run_job(job)
    write_cube(os.path.join(out, "estimate.hsdc"), res.estimate)
    _write_trace(res.trace, os.path.join(out, "trace.csv"))
    if truth is not None:
        rep = evaluate(res.estimate, truth)
        rep.to_csv(os.path.join(out, "report.csv"))
        with open(os.path.join(out, "report.txt"), "w") as fh:
            fh.write(f"compression ratio {res.metadata['compression_ratio']}\n")
            fh.write(rep.to_table())
        print(rep.to_table(), end="")
    return out


def _save_image(path_stem, img, like_png):
    if like_png:
        write_png(path_stem + ".png", img)
    else:
        write_cube(path_stem + ".hsdc", Datacube(img))


def _restore_common(cfg, task, degraded, mask, truth, like_png):
    out = _outdir(cfg)
    job = ReconJob(task, degraded, observed_mask=mask, opts=_opts(cfg, task),
                   patch=cfg.get("patch", 7), stride=cfg.get("stride", 2))
    res = run_job(job)
    est = res.estimate.data
    _save_image(os.path.join(out, "restored"), est, like_png)
    write_cube(os.path.join(out, "restored_float.hsdc"), res.estimate)
    _write_trace(res.trace, os.path.join(out, "trace.csv"))
    if truth is not None:
        rep = psnr(est, truth, peak=255.0)
        base = psnr(degraded, truth, peak=255.0)
        rep.to_csv(os.path.join(out, "report.csv"))
        with open(os.path.join(out, "report.txt"), "w") as fh:
            fh.write(f"input psnr {base.psnr_mean:.4f}\n")
            fh.write(rep.to_table())
        print(f"input psnr {base.psnr_mean:.4f}  restored psnr {rep.psnr_mean:.4f}")
    return out


def cmd_denoise(cfg: RunConfig):
    path = _need(cfg, "input")
    img = read_image(path)
    truth = read_image(cfg.get("truth")) if cfg.get("truth") else None
    if cfg.get("corrupt", False):
        sigma = cfg.get("sigma", 25.0)
        rng = np.random.default_rng([cfg.get("seed", 0), 4])
        truth = img
        img = img + sigma * rng.standard_normal(img.shape)
        _save_image(os.path.join(_outdir(cfg), "noisy"), img, True)
    return _restore_common(cfg, "denoise", img, None, truth, path.lower().endswith(".png"))


def observed_mask(shape, ratio, seed) -> np.ndarray:
    """Keep ``round(ratio * H * W)`` pixels chosen uniformly at random."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("observed ratio must lie in (0, 1]")
    H, W = shape
    n_keep = int(round(ratio * H * W))
    order = np.random.default_rng([seed, 5]).permutation(H * W)
    mask = np.zeros(H * W)
    mask[order[:n_keep]] = 1.0
    return mask.reshape(H, W)


def cmd_inpaint(cfg: RunConfig):
    path = _need(cfg, "input")
    img = read_image(path)
    truth = read_image(cfg.get("truth")) if cfg.get("truth") else None
    if cfg.get("mask"):
        mask = read_image(cfg.get("mask")).max(axis=2) > 0
        mask = mask.astype(float)
    elif cfg.get("observed_ratio") is not None:
        mask = observed_mask(img.shape[:2], cfg.get("observed_ratio"), cfg.get("seed", 0))
        truth = img
        img = img * mask[:, :, None]
        _save_image(os.path.join(_outdir(cfg), "corrupted"), img, True)
    else:
        raise _Fail(EXIT_INVALID, "inpaint needs --observed-ratio or --mask")
    return _restore_common(cfg, "inpaint", img, mask, truth, path.lower().endswith(".png"))


def _parse_regions(text):
    regions = []
    for part in filter(None, (text or "").split(";")):
        try:
            vals = tuple(int(v) for v in part.split(","))
        except ValueError:
            raise _Fail(EXIT_INVALID, f"region {part!r} is not row,col,height,width")
        if len(vals) != 4:
            raise _Fail(EXIT_INVALID, f"region {part!r} is not row,col,height,width")
        regions.append(vals)
    return regions


def cmd_eval(cfg: RunConfig):
    out = _outdir(cfg)
    recon = read_cube(_need(cfg, "recon")).to_cube() if _need(cfg, "recon").endswith(".hsdc") \
        else Datacube(read_image(cfg.get("recon")))
    truth_path = _need(cfg, "truth")
    truth = read_cube(truth_path).to_cube() if truth_path.endswith(".hsdc") else Datacube(read_image(truth_path))
    rep = evaluate(recon, truth, _parse_regions(cfg.get("regions")), cfg.get("peak"))
    rep.to_csv(os.path.join(out, "report.csv"))
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(rep.to_table())
    print(rep.to_table(), end="")
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "denoise": cmd_denoise,
    "inpaint": cmd_inpaint,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        out = COMMANDS[args.command](cfg)
        cfg.save(os.path.join(out, "config.txt"))
    except _Fail as exc:
        print(f"blindcs: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"blindcs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ArithmeticError) as exc:
        print(f"blindcs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"blindcs: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
