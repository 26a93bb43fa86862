"""``tdnc`` command-line tool: fit, compress, decompress, sweep, metrics."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import codec
from .bitstream import BitstreamError, RateConfig, compute_bpp, deserialize
from .metrics import MetricReport, ms_ssim, psnr
from .tensor import read_tdt3, write_tdt3
from .tensorize import read_image, write_image

log = logging.getLogger("tdnc")

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")
TENSOR_SUFFIXES = (".tdt3",)
SWEEP_SCHEMA = "tdnc-sweep/1"
SWEEP_FIELDS = (
    "image_id", "config_id", "r1", "r2", "r3", "intervals", "factor_bits",
    "bpp", "psnr_db", "ms_ssim", "encode_ms", "decode_ms", "log",
)
MEAN_ROW_ID = "__mean__"


class CliError(Exception):
    pass


def parse_config_file(path) -> List[RateConfig]:
    """One config per line: ``R1 R2 R3 M [b_u]``; ``#`` starts a comment."""
    configs = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            if len(parts) not in (4, 5):
                raise ValueError("expected 'R1 R2 R3 M [b_u]'")
            values = [int(v) for v in parts]
            ranks, m = tuple(values[:3]), values[3]
            b_u = values[4] if len(values) == 5 else 16
            configs.append(RateConfig(ranks, m, b_u, len(configs)))
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: bad config line {raw.strip()!r}: {exc}") from None
    if not configs:
        raise CliError(f"{path}: no configs found")
    return configs


def _thread_count() -> int:
    value = os.environ.get("TDNC_THREADS")
    if not value:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"TDNC_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise CliError("TDNC_THREADS must be >= 1")
    return n


def _list_inputs(directory, suffixes) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{directory} is not a directory")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in suffixes)


def _load_instance(path) -> codec.CodecInstance:
    try:
        return codec.CodecInstance.load(path)
    except OSError as exc:
        raise CliError(f"cannot read codec instance {path}: {exc.strerror}") from None
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed codec instance {path}: missing {exc}") from None


def cmd_fit(args) -> int:
    configs = parse_config_file(args.configs)
    suffixes = TENSOR_SUFFIXES if args.strategy == "latent" else IMAGE_SUFFIXES
    files = _list_inputs(args.corpus, suffixes)
    if not files:
        raise CliError(f"corpus {args.corpus} has no {'/'.join(suffixes)} files")
    reader = read_tdt3 if args.strategy == "latent" else read_image
    corpus = [reader(p) for p in files]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        inst = codec.fit_quantizers(
            corpus, configs, strategy=args.strategy, patch_size=args.patch_size,
            boundary_method=args.boundaries, max_samples=args.max_samples, seed=args.seed,
        )
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.eval_configs:
        for c in parse_config_file(args.eval_configs):
            cid = inst.ensure_config(c.ranks, c.intervals, c.factor_bits)
            src = inst.get(cid).derived_from
            if src is not None:
                print(f"config {cid}: {c.describe()} derived from config {src}")
    for cid in sorted(inst.configs):
        fc = inst.configs[cid]
        if fc.derived_from is None:
            print(f"config {cid}: {fc.config.describe()}  samples {fc.samples}")
    inst.save(args.out)
    print(f"wrote {args.out}: {len(inst)} configs from {len(files)} corpus files")
    return 0


def _describe(fc) -> str:
    return f"{fc.config.config_id} ({fc.config.describe()})"


def cmd_compress(args) -> int:
    inst = _load_instance(args.instance)
    latent = inst.strategy == "latent"
    data = read_tdt3(args.input) if latent else read_image(args.input)
    if args.target_bpp is not None:
        cid, bound, overshoot = codec.rate_control(args.target_bpp, inst, data.shape)
        note = " (no config fits the target; using the smallest)" if overshoot else ""
        print(f"rate control: config {cid}, bound {bound:.4f} bpp{note}")
    else:
        cid = args.config
    if latent:
        payload = codec.compress_tensor(data, inst, cid, embed_model=args.embed_model)
    else:
        payload = codec.compress(data, inst, cid, embed_model=args.embed_model)
    blob = payload.to_bytes()
    Path(args.out).write_bytes(blob)
    bpp = compute_bpp(payload, payload.descriptor.pixel_count)
    print(f"config {_describe(inst.get(cid))}  {len(blob)} bytes  {bpp:.4f} bpp")
    return 0


def cmd_decompress(args) -> int:
    blob = Path(args.input).read_bytes()
    payload = deserialize(blob)
    inst = _load_instance(args.instance) if args.instance else None
    out = codec.decompress(payload, inst)
    if payload.descriptor.strategy == "latent":
        write_tdt3(args.out, out)
    else:
        write_image(args.out, out)
    print(f"wrote {args.out}: {out.shape[1]}x{out.shape[0]}x{out.shape[2]}")
    return 0


def cmd_metrics(args) -> int:
    ref, test = read_image(args.ref), read_image(args.test)
    report = MetricReport(psnr(ref, test), ms_ssim(ref, test))
    print(report.describe())
    return 0


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


def _sweep_one(item, inst, cid):
    name, data = item
    fc = inst.get(cid)
    t0 = time.perf_counter()
    if inst.strategy == "latent":
        payload = codec.compress_tensor(data, inst, cid)
    else:
        payload = codec.compress(data, inst, cid)
    blob = payload.to_bytes()
    t1 = time.perf_counter()
    out = codec.decompress(blob, inst)
    t2 = time.perf_counter()
    if inst.strategy == "latent":
        err = float(np.mean((out - data) ** 2))
        p_db = float("inf") if err == 0 else -10 * math.log10(err)
        ms = float("nan")
    else:
        p_db, ms = psnr(data, out), ms_ssim(data, out)
    r1, r2, r3 = payload.ranks
    return {
        "image_id": name, "config_id": cid, "r1": r1, "r2": r2, "r3": r3,
        "intervals": fc.config.intervals, "factor_bits": fc.config.factor_bits,
        "bpp": compute_bpp(payload, payload.descriptor.pixel_count), "psnr_db": p_db, "ms_ssim": ms,
        "encode_ms": 1000 * (t1 - t0), "decode_ms": 1000 * (t2 - t1), "log": "",
    }


def _mean_rows(rows, ids) -> list:
    out = []
    for cid in ids:
        sel = [r for r in rows if r["config_id"] == cid]
        if not sel:
            continue
        row = {k: "" for k in SWEEP_FIELDS}
        row.update(image_id=MEAN_ROW_ID, config_id=cid, intervals=sel[0]["intervals"],
                   factor_bits=sel[0]["factor_bits"], log=f"{len(sel)} images")
        for k in ("bpp", "psnr_db", "ms_ssim", "encode_ms", "decode_ms"):
            row[k] = float(np.mean([r[k] for r in sel]))
        out.append(row)
    return out


def run_sweep(items, inst, ids, threads: int = 1):
    """Encode and decode every (item, config) pair; rows come back in input order."""
    jobs = [(item, cid) for item in items for cid in ids]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda job: _sweep_one(job[0], inst, job[1]), jobs))
    return rows


def cmd_sweep(args) -> int:
    inst = _load_instance(args.instance)
    latent = inst.strategy == "latent"
    files = _list_inputs(args.dir, TENSOR_SUFFIXES if latent else IMAGE_SUFFIXES)
    if not files:
        raise CliError(f"no input images in {args.dir}")
    if args.configs:
        ids = [inst.ensure_config(c.ranks, c.intervals, c.factor_bits)
               for c in parse_config_file(args.configs)]
    else:
        ids = inst.ids()
    items, bad = [], []
    for p in files:
        try:
            items.append((p.name, read_tdt3(p) if latent else read_image(p)))
        except (OSError, ValueError) as exc:
            print(f"warning: skipping {p.name}: {exc}", file=sys.stderr)
            bad.append(p.name)
    if not items:
        raise CliError(f"no readable input images in {args.dir}")
    rows = run_sweep(items, inst, ids, _thread_count())
    for name in bad:
        row = {k: "" for k in SWEEP_FIELDS}
        row.update(image_id=name, log="unreadable image, skipped")
        rows.append(row)
    rows += _mean_rows([r for r in rows if r["log"] == ""], ids)
    with open(args.out_csv, "w", newline="") as fh:
        fh.write(f"#schema={SWEEP_SCHEMA}\n")
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in SWEEP_FIELDS})
    print(f"wrote {args.out_csv}: {len(items)} images x {len(ids)} configs")
    if args.svg:
        Path(args.svg).write_text(sweep_svg(rows))
        print(f"wrote {args.svg}")
    return 0


def read_sweep_csv(path) -> list:
    """Parse a sweep CSV back into dicts, checking the schema line."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"#schema={SWEEP_SCHEMA}":
            raise ValueError(f"{path}: unexpected schema line {first!r}")
        return list(csv.DictReader(fh))


def _panel(points, means, x0, y0, w, h, ylabel) -> List[str]:
    parts = [f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>']
    finite = [(x, y) for x, y in points + means if math.isfinite(x) and math.isfinite(y)]
    if not finite:
        return parts
    xs, ys = [p[0] for p in finite], [p[1] for p in finite]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = min(ys), max(ys)
    xhi, yhi = (xhi if xhi > xlo else xlo + 1), (yhi if yhi > ylo else ylo + 1)

    def tx(x):
        return x0 + 10 + (x - xlo) / (xhi - xlo) * (w - 20)

    def ty(y):
        return y0 + h - 10 - (y - ylo) / (yhi - ylo) * (h - 20)

    for x, y in points:
        if math.isfinite(x) and math.isfinite(y):
            parts.append(f'<circle cx="{tx(x):.1f}" cy="{ty(y):.1f}" r="2.5" fill="#6a8fc7"/>')
    line = " ".join(f"{tx(x):.1f},{ty(y):.1f}" for x, y in sorted(means) if math.isfinite(y))
    if line:
        parts.append(f'<polyline points="{line}" fill="none" stroke="#c0392b" stroke-width="1.5"/>')
    parts.append(f'<text x="{x0 + w / 2}" y="{y0 + h + 28}" text-anchor="middle">bpp '
                 f'[{xlo:.3f}, {xhi:.3f}]</text>')
    parts.append(f'<text x="{x0 - 8}" y="{y0 + h / 2}" text-anchor="end">{ylabel}</text>')
    parts.append(f'<text x="{x0 - 8}" y="{y0 + 12}" text-anchor="end">{yhi:.3f}</text>')
    parts.append(f'<text x="{x0 - 8}" y="{y0 + h - 4}" text-anchor="end">{ylo:.3f}</text>')
    return parts


def sweep_svg(rows) -> str:
    """Static two-panel scatter: (bpp, PSNR) and (bpp, MS-SSIM); means joined by a line."""
    per = [r for r in rows if r["image_id"] != MEAN_ROW_ID and r["log"] == ""]
    mean = [r for r in rows if r["image_id"] == MEAN_ROW_ID]
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" width="900" height="380" '
             'font-family="sans-serif" font-size="12">']
    for i, (key, label) in enumerate((("psnr_db", "PSNR dB"), ("ms_ssim", "MS-SSIM"))):
        pts = [(float(r["bpp"]), float(r[key])) for r in per]
        mpts = [(float(r["bpp"]), float(r[key])) for r in mean]
        parts += _panel(pts, mpts, 100 + i * 430, 20, 340, 300, label)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdnc", description="Tucker-decomposition image codec")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit quantizer boundary models on a corpus")
    f.add_argument("--corpus", required=True, help="directory of training images (or .tdt3 tensors)")
    f.add_argument("--configs", required=True, help="config file, one 'R1 R2 R3 M [b_u]' per line")
    f.add_argument("--out", required=True, help="codec instance file to write")
    f.add_argument("--eval-configs", help="extra configs to derive from the fitted ones")
    f.add_argument("--strategy", default="patch-stack", choices=("patch-stack", "whole-image", "latent"))
    f.add_argument("--patch-size", type=int, default=16)
    f.add_argument("--boundaries", default="lloyd", choices=codec.BOUNDARY_METHODS)
    f.add_argument("--max-samples", type=int, default=200_000)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("compress", help="compress an image (or .tdt3 latent)")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--instance", required=True)
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", type=int, help="config id")
    g.add_argument("--target-bpp", type=float, help="pick a config by rate control")
    c.add_argument("--out", required=True)
    c.add_argument("--embed-model", action="store_true", help="store the quantizer model in the file")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decode a .tdnc file")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--instance", help="codec instance (optional when the model is embedded)")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompress)

    s = sub.add_parser("sweep", help="rate-distortion sweep over a directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--instance", required=True)
    s.add_argument("--out-csv", required=True)
    s.add_argument("--svg", help="also write a static SVG scatter plot")
    s.add_argument("--configs", help="config file; unseen configs are derived from fitted ones")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("metrics", help="PSNR and MS-SSIM between two images")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except BitstreamError as exc:
        print(f"error: parse error: {exc}", file=sys.stderr)
    except (CliError, codec.CodecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
