"""``qckit`` command line.

Exit codes: 0 success, 1 I/O or file-format failure, 2 usage or
configuration error, 3 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import logging
import os
import struct
import sys
import time
from pathlib import Path

EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NAN = 3

MESH_FILE = "mesh.qcm"
SERIES_FILE = "series.qcs"
CONFIG_FILE = "config.txt"
CKPT_FILE = "checkpoint.qcc"
LOG_FILE = "metrics.csv"

LATENT_MAGIC = b"QCLAT001"
_LATENT_HEADER = struct.Struct("<QId")

log = logging.getLogger("qckit")


class UsageError(Exception):
    pass


def _limit_threads(n: int | None) -> None:
    # must run before numpy loads its BLAS
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


# -- helpers -------------------------------------------------------------------


def _data_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.is_dir():
        return p / MESH_FILE, p / SERIES_FILE
    return p.with_name(MESH_FILE), p


def _load_data(path):
    from .data import load_series
    from .mesh import load_mesh

    mesh_path, series_path = _data_paths(path)
    mesh = load_mesh(mesh_path)
    return mesh, load_series(series_path, mesh)


def _mesh_arg(spec: str, dim: int = 2):
    """``grid:32`` (or a bare integer) for a uniform grid, otherwise a mesh file path."""
    from .mesh import load_mesh, uniform_grid

    s = spec.removeprefix("grid:")
    if s.isdigit():
        return uniform_grid(dim, int(s))
    return load_mesh(spec)


def _echo_config(run, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    run.save(out_dir / CONFIG_FILE)
    log.info("resolved config:\n%s", run.to_text().rstrip())


def save_latents(codes, dt: float, path) -> None:
    import numpy as np

    codes = np.asarray(codes, dtype="<f8")
    Path(path).write_bytes(LATENT_MAGIC + _LATENT_HEADER.pack(codes.shape[0], codes.shape[1], dt) + codes.tobytes())


def load_latents(path):
    import numpy as np

    from .errors import FormatError

    data = Path(path).read_bytes()
    hlen = 8 + _LATENT_HEADER.size
    if len(data) < hlen or data[:8] != LATENT_MAGIC:
        raise FormatError(f"{path}: not a latent code file (bad magic)")
    T, L, dt = _LATENT_HEADER.unpack_from(data, 8)
    if len(data) - hlen != 8 * T * L:
        raise FormatError(f"{path}: expected {8 * T * L} value bytes, found {len(data) - hlen}")
    return np.frombuffer(data, dtype="<f8", offset=hlen).reshape(T, L).copy(), dt


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    import numpy as np

    from .config import RunConfig
    from .data import FieldSeries, gen_lowpass_signals, gen_pulse2d, gen_wake2d, save_series
    from .mesh import Mesh, gaussian_density, nonuniform_mesh, save_mesh, uniform_grid

    run = RunConfig.load(args.config) if args.config else RunConfig()
    for key, val in (("data.kind", args.kind), ("data.grid", args.grid), ("data.points", args.points),
                     ("data.T", args.T), ("data.seed", args.seed)):
        if val is not None:
            run[key] = val
    kind = run["data.kind"]
    out = Path(args.out)
    if kind == "lowpass":
        n = run["data.points"] or 128
        x, f, _ = gen_lowpass_signals(n, "nonuniform" if args.nonuniform else "uniform", run["data.seed"])
        mesh = Mesh(x[:, None])
        series = FieldSeries(f[None, None, :], 1.0, mesh)
    else:
        if args.mesh:
            mesh = _mesh_arg(args.mesh)
        elif run["data.points"]:
            mesh = nonuniform_mesh(run["data.points"], gaussian_density((0.5, 0.5), 0.35, 0.3), seed=run["data.seed"])
        else:
            mesh = uniform_grid(2, run["data.grid"])
        if kind == "pulse2d":
            series = gen_pulse2d(mesh, run["data.T"], seed=run["data.seed"])
        elif kind == "wake2d":
            series = gen_wake2d(mesh, run["data.T"], seed=run["data.seed"])
        else:
            raise UsageError(f"unknown data kind {kind!r}")
    _echo_config(run, out)
    save_mesh(mesh, out / MESH_FILE)
    save_series(series, out / SERIES_FILE)
    v = series.values
    print(f"T={series.T} C={series.C} N={series.N} min={np.min(v):.6g} max={np.max(v):.6g}")
    return 0


def cmd_build_cache(args) -> int:
    from .errors import ConfigurationError
    from .index_map import OpCounter, cache_path, cached_index_map, choose_alpha

    src = _mesh_arg(args.mesh_in)
    dst = _mesh_arg(args.mesh_out) if args.mesh_out else src
    if args.alpha is not None:
        if not args.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        alpha = args.alpha
    else:
        alpha = choose_alpha(src, dst, args.target_s)
    counter = OpCounter()
    t0 = time.perf_counter()
    imap, hit = cached_index_map(src, dst, alpha, counter, directory=args.out)
    st = imap.stats
    print(f"alpha={alpha:.17g} path={cache_path(src, dst, alpha, args.out)}")
    print(f"mean_S={st['mean']:.6g} max_S={st['max']} empty={st['empty']} pairs={st['pairs']}")
    print(f"distance_evals={counter.distance_evals} cache_hit={hit} seconds={time.perf_counter() - t0:.3f}")
    return 0


def _run_config_for_train(args):
    from .config import RunConfig

    run = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        run[k.strip()] = v.strip()
    if args.max_steps is not None:
        run["train.max_steps"] = args.max_steps
    return run


def cmd_train(args) -> int:
    from .compression import AutoencoderConfig, QCAutoencoder, save_checkpoint, train
    from .errors import TrainingError

    run = _run_config_for_train(args)
    mesh, series = _load_data(args.data)
    cfg = AutoencoderConfig.from_run_config(run)
    out = Path(args.out)
    _echo_config(cfg.to_run_config(run), out)
    cache = args.cache_dir or bool(cfg.cache)
    model = QCAutoencoder(cfg, mesh, series.C, cache=cache)
    print(f"parameters={model.n_parameters()} compression_ratio={model.compression_ratio:.6g} cache_hits={model.cache_hits}")
    try:
        result = train(model, series.values, log_path=out / LOG_FILE)
    except TrainingError as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint, out / CKPT_FILE)
        print(f"training aborted: {exc}; last good checkpoint at step "
              f"{exc.checkpoint.step if exc.checkpoint else 'n/a'}", file=sys.stderr)
        return EXIT_NAN
    save_checkpoint(result.checkpoint, out / CKPT_FILE)
    tr, te = result.last("train"), result.last("test")
    print(f"steps={result.checkpoint.step} seconds={result.seconds:.1f} "
          f"train_rel_err={tr['rel_err']:.6g} test_rel_err={te['rel_err']:.6g}")
    return 0


def _load_model(path, cache_dir=None):
    from .compression import load_checkpoint

    ck = load_checkpoint(path)
    return ck, ck.build_model(cache=cache_dir or False)


def cmd_eval(args) -> int:
    from .compression import max_error, reconstruct, relative_error

    _, model = _load_model(args.checkpoint, args.cache_dir)
    _, series = _load_data(args.data)
    if series.N != model.mesh.count or series.C != model.in_channels:
        raise UsageError("data does not match the checkpoint's mesh or channel count")
    recon = reconstruct(model, series.values)
    print(f"relative_error={relative_error(recon, series.values):.6g}")
    print(f"max_error={max_error(recon, series.values):.6g}")
    print(f"compression_ratio={model.compression_ratio:.6g}")
    return 0


def cmd_compress(args) -> int:
    from .compression import encode
    from .data import load_series

    _, model = _load_model(args.checkpoint, args.cache_dir)
    series = load_series(args.inp, model.mesh)
    codes = encode(model, series.values)
    save_latents(codes, series.dt, args.out)
    print(f"T={codes.shape[0]} L={codes.shape[1]} compression_ratio={model.compression_ratio:.6g}")
    return 0


def cmd_decompress(args) -> int:
    from .compression import decode
    from .data import FieldSeries, save_series

    _, model = _load_model(args.checkpoint, args.cache_dir)
    codes, dt = load_latents(args.inp)
    if codes.shape[1] != model.latent_dim:
        raise UsageError(f"codes have L={codes.shape[1]}, checkpoint expects {model.latent_dim}")
    values = decode(model, codes)
    save_series(FieldSeries(values, dt, model.mesh), args.out)
    print(f"T={values.shape[0]} C={values.shape[1]} N={values.shape[2]}")
    return 0


def cmd_lowpass_demo(args) -> int:
    from .lowpass import METHODS, run_lowpass, write_csv

    res = run_lowpass(args.n, args.sampling, args.n_out, args.seed)
    if args.out:
        write_csv(res, args.out)
    for m in METHODS:
        print(f"{m} max_abs_error={res.errors[m]:.6g}")
    return 0


def cmd_bench(args) -> int:
    import numpy as np

    from .index_map import OpCounter, cached_index_map
    from .quadconv import QuadConvLayer

    mesh = _mesh_arg(args.mesh)
    if args.alpha_sweep:
        alphas = [float(a) for a in args.alpha_sweep.split(",")]
    else:
        h = mesh.spacing if mesh.is_grid else float(np.ptp(mesh.points[:, 0])) / mesh.count ** (1 / mesh.dim)
        alphas = [h * k for k in (1.5, 3.0, 6.0)]
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch, args.channels, mesh.count))
    print("alpha,mean_S,pairs,distance_evals,map_seconds,cache_hit,kernel_evals,forward_seconds,invariant_ok")
    ok_all = True
    for a in alphas:
        counter = OpCounter()
        t0 = time.perf_counter()
        if args.cache_dir:
            imap, hit = cached_index_map(mesh, mesh, a, counter, directory=args.cache_dir)
        else:
            from .index_map import build_index_map

            imap, hit = build_index_map(mesh, mesh, a, counter), False
        map_s = 0.0 if hit else time.perf_counter() - t0
        dist = counter.distance_evals
        layer = QuadConvLayer(mesh, mesh, args.channels, args.channels, alpha=a, index_map=imap, rng=rng)
        counter.reset()
        t0 = time.perf_counter()
        layer.forward(x, counter)
        fwd_s = time.perf_counter() - t0
        ok = counter.kernel_evals == int(imap.counts().sum())
        ok_all &= ok
        print(f"{a:.6g},{imap.stats['mean']:.6g},{imap.n_pairs},{dist},{map_s:.4f},{hit},"
              f"{counter.kernel_evals},{fwd_s:.4f},{ok}")
    return 0 if ok_all else EXIT_IO


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qckit", description="Quadrature convolution toolkit")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and results")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic mesh + series")
    g.add_argument("--kind", choices=["pulse2d", "wake2d", "lowpass"])
    g.add_argument("--grid", type=int, help="uniform grid side")
    g.add_argument("--points", type=int, help="scattered mesh point count")
    g.add_argument("--mesh", help="mesh file (or grid:N) to generate on")
    g.add_argument("--T", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--nonuniform", action="store_true", help="lowpass: non-uniform sampling")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("build-cache", help="precompute an index map")
    c.add_argument("--mesh-in", required=True)
    c.add_argument("--mesh-out")
    grp = c.add_mutually_exclusive_group(required=True)
    grp.add_argument("--alpha", type=float)
    grp.add_argument("--target-s", type=float)
    c.add_argument("--out", help="cache directory (default: $QCKIT_CACHE_DIR or ~/.cache/qckit)")
    c.set_defaults(func=cmd_build_cache)

    t = sub.add_parser("train", help="train an autoencoder")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="directory from gen-data, or a series file")
    t.add_argument("--out", required=True)
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--cache-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--cache-dir")
    e.set_defaults(func=cmd_eval)

    for name, func, what in (("compress", cmd_compress, "series to latent codes"),
                             ("decompress", cmd_decompress, "latent codes to series")):
        s = sub.add_parser(name, help=what)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--in", dest="inp", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--cache-dir")
        s.set_defaults(func=func)

    lp = sub.add_parser("lowpass-demo", help="1-D low-pass comparison")
    lp.add_argument("--n", type=int, default=128, help="number of signal samples")
    lp.add_argument("--sampling", choices=["uniform", "nonuniform"], default="nonuniform")
    lp.add_argument("--n-out", type=int, default=128, help="number of output points")
    lp.add_argument("--seed", type=int, default=0)
    lp.add_argument("--out", help="CSV path")
    lp.set_defaults(func=cmd_lowpass_demo)

    b = sub.add_parser("bench", help="operation counts and timings over support radii")
    b.add_argument("--mesh", default="grid:32")
    b.add_argument("--alpha-sweep", help="comma-separated radii")
    b.add_argument("--channels", type=int, default=4)
    b.add_argument("--batch", type=int, default=4)
    b.add_argument("--cache-dir")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _limit_threads(args.threads)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(name)s: %(message)s")

    from .errors import ConfigurationError, FormatError, QCKitError, ShapeError

    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ShapeError) as exc:
        print(f"qckit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"qckit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except QCKitError as exc:
        print(f"qckit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
