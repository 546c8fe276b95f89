"""``hashconv`` command line.

Exit codes: 0 success, 1 internal error (including failed validation),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, net, psh
from .batch import build_super
from .voxel import hierarchy, is_power_of_two, normalize_model, read_model, voxelize, write_off

log = logging.getLogger("hashconv")


class UsageError(Exception):
    """Bad input that should map to exit code 2."""


def _resolution(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not is_power_of_two(value) or not 4 <= value <= 65536:
        raise argparse.ArgumentTypeError(f"resolution must be a power of two in [4, 65536], got {value}")
    return value


def _resolution_list(text: str) -> list[int]:
    return [_resolution(part) for part in text.split(",") if part.strip()]


# -- commands ----------------------------------------------------------------------

def cmd_voxelize(args) -> int:
    model = read_model(args.input)
    outside = np.abs(model.vertices).max(initial=0.0) > 0.5
    if args.normalize == "always" or (args.normalize == "auto" and outside):
        model = normalize_model(model)
    s = voxelize(model, args.res, samples_per_area=args.density, dilate=args.dilate, rng=args.seed)
    table = psh.build_psh(s, seed=args.seed)
    psh.save(args.out, [table])
    print(f"n={table.n} m_bar={table.m_bar} r_bar={table.r_bar}")
    return 0


def max_levels(resolution: int) -> int:
    """Levels from ``resolution`` down to 4 inclusive."""
    return max(1, resolution.bit_length() - 2)


def cmd_build(args) -> int:
    levels = psh.load(args.input)
    finest = levels[0]
    limit = max_levels(finest.resolution)
    count = limit if args.levels is None else args.levels
    if count > limit:
        log.warning("requested %d levels but resolution %d allows %d; clamping",
                    count, finest.resolution, limit)
        count = limit
    coarsest = finest.resolution >> (count - 1)
    sets = hierarchy(psh.to_voxel_set(finest), coarsest)
    out = [finest] + [psh.build_psh(s, seed=args.seed) for s in sets[1:]]
    psh.save(args.out, out)
    print(" ".join(f"{lv.resolution}:n={lv.n}" for lv in out))
    return 0


def cmd_validate(args) -> int:
    levels = psh.load(args.input)
    bad = 0
    for lv in levels:
        problems = psh.validate(lv)
        bad += len(problems)
        status = "ok" if not problems else "; ".join(problems)
        print(f"level res={lv.resolution} n={lv.n} m_bar={lv.m_bar} r_bar={lv.r_bar}: {status}")
    return 1 if bad else 0


def cmd_batch(args) -> int:
    base = Path(args.manifest).parent
    paths = [line.strip() for line in Path(args.manifest).read_text().splitlines()
             if line.strip() and not line.lstrip().startswith("#")]
    if not paths:
        raise UsageError("manifest lists no .psh files")
    levels = [psh.load(base / p)[0] for p in paths]
    sp = build_super(levels)
    print(f"b={sp.b} res={sp.resolution} M={sp.M.tolist()} R={sp.R.tolist()} N={sp.N.tolist()}")
    return 0


def cmd_bench_mem(args) -> int:
    rows = bench.run_bench(args.shape, args.res, args.model, args.seed)
    bench.write_csv(args.csv, rows)
    print(",".join(bench.CSV_HEADER))
    for r in rows:
        print(f"{r.N},{r.n},{r.m},{r.r},{r.octants},{r.bytes_H},{r.bytes_Phi},{r.bytes_T},{r.bytes_D}")
    if len(rows) >= 2:
        s = bench.summarize(rows)
        print(f"slope_n={s['slope_n']:.3f} slope_slack={s['slope_slack']:.3f} "
              f"slope_octants={s['slope_octants']:.3f} max_m_over_n={s['max_load_ratio']:.4f}")
    return 0


def cmd_make_data(args) -> int:
    out = Path(args.out)
    for split, count, seed in (("train", args.train, args.seed), ("test", args.test, args.seed + 1)):
        folder = out / split
        folder.mkdir(parents=True, exist_ok=True)
        models, labels = net.toy_dataset(count, seed)
        lines = []
        for i, (m, y) in enumerate(zip(models, labels)):
            name = f"{i:04d}_{net.CLASSES[y]}.off"
            write_off(folder / name, m)
            lines.append(f"{name} {y}\n")
        (folder / "labels.txt").write_text("".join(lines))
    print(f"wrote {args.train} train and {args.test} test models to {out}")
    return 0


def read_split(folder: Path):
    """Models and labels listed in ``folder/labels.txt`` (``file label`` per line)."""
    listing = folder / "labels.txt"
    models, labels = [], []
    for line in listing.read_text().splitlines():
        if not line.strip():
            continue
        name, label = line.split()
        models.append(read_model(folder / name))
        labels.append(int(label))
    if not models:
        raise UsageError(f"{listing} lists no models")
    return models, np.asarray(labels, dtype=np.int64)


def _config(path) -> net.TrainConfig:
    if path is None:
        return net.TrainConfig()
    return net.TrainConfig.from_text(Path(path).read_text())


def _finest_level(resolution: int) -> int:
    return resolution.bit_length() - 1


def cmd_train(args) -> int:
    cfg = _config(args.config)
    data = Path(args.data)
    models, labels = read_split(data / "train")
    encoded = [net.encode(m, cfg.resolution, 2, cfg.seed) for m in models]
    model = net.HashNet(_finest_level(cfg.resolution), len(net.CLASSES), dropout=cfg.dropout,
                        seed=cfg.seed)
    net.fit(model, encoded, labels, cfg,
            log=lambda e, lr, loss: print(f"epoch {e} lr={lr:.6g} loss={loss:.6f}", flush=True))
    ckpt = Path(args.checkpoint or data / "model.ckpt")
    model.save(ckpt)
    print(f"train_accuracy={net.accuracy(net.predict_scores(model, encoded), labels):.4f}")
    if (data / "test" / "labels.txt").exists():
        tm, tl = read_split(data / "test")
        print(f"test_accuracy={net.evaluate(model, tm, tl, cfg.resolution, args.voting, cfg.seed):.4f}")
    print(f"checkpoint={ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    data = Path(args.data)
    model = net.HashNet.load(args.checkpoint or data / "model.ckpt")
    models, labels = read_split(data / "test")
    acc = net.evaluate(model, models, labels, cfg.resolution, args.voting, cfg.seed)
    print(f"test_accuracy={acc:.4f}")
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hashconv", description="Sparse voxel CNN on perfect spatial hashing.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("voxelize", help="voxelize a mesh or point cloud into a .psh file")
    v.add_argument("--input", required=True)
    v.add_argument("--res", type=_resolution, required=True)
    v.add_argument("--dilate", action="store_true")
    v.add_argument("--density", type=float, default=4.0, help="samples per unit area per finest voxel")
    v.add_argument("--normalize", choices=["auto", "always", "never"], default="auto",
                   help="auto rescales only models that leave the [-0.5, 0.5] cube")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_voxelize)

    b = sub.add_parser("build", help="add coarser levels to a .psh file")
    b.add_argument("--in", dest="input", required=True)
    b.add_argument("--levels", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    c = sub.add_parser("validate", help="check every level of a .psh file")
    c.add_argument("--in", dest="input", required=True)
    c.set_defaults(func=cmd_validate)

    m = sub.add_parser("batch", help="assemble the super tables of a manifest of .psh files")
    m.add_argument("--manifest", required=True)
    m.set_defaults(func=cmd_batch)

    k = sub.add_parser("bench-mem", help="PSH memory benchmark")
    k.add_argument("--shape", choices=["sphere", "shell", "file"], default="shell")
    k.add_argument("--model", help="mesh path for --shape file")
    k.add_argument("--res", type=_resolution_list, default=[32, 64, 128, 256, 512])
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--csv", required=True)
    k.set_defaults(func=cmd_bench_mem)

    d = sub.add_parser("make-data", help="write the synthetic three-class dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--train", type=int, default=300)
    d.add_argument("--test", type=int, default=60)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_make_data)

    for name, func in (("train", cmd_train), ("eval", cmd_eval)):
        t = sub.add_parser(name, help=f"{name} the classifier on a dataset directory")
        t.add_argument("--data", required=True)
        t.add_argument("--config")
        t.add_argument("--checkpoint")
        t.add_argument("--voting", type=int, default=None, help="number of upright poses to pool")
        t.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "voting", None) is not None and args.voting < 1:
        print("hashconv: error: --voting must be >= 1", file=sys.stderr)
        return 2
    if getattr(args, "levels", None) is not None and args.levels < 1:
        print("hashconv: error: --levels must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, OSError, ValueError) as exc:
        print(f"hashconv: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"hashconv: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
