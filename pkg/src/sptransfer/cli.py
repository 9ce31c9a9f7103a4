"""Command-line front end.

Exit codes: 0 success, 1 file or pipeline error, 2 usage or configuration
error.  Every error message starts with the thing that failed
(``input:``, ``reference:``, ``matches:``, ``config:``, ``output:`` or the
pipeline stage name).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import correspondence as corr
from .features import ALL_TOGGLES, FeatureWeights
from .imagecore import from_uint8, lab_to_rgb
from .matching import format_table
from .pipeline import STOP_STAGES, PipelineConfig, StageError, run

INPUT_FORMATS = ("PNG", "JPEG")

# fields with a hand-picked flag name; every other field gets --field-name
_NAMED_FLAGS = {
    "match_fraction": "--match-fraction",
    "t_cluster": "--t-cluster",
    "target_superpixel_area": "--superpixel-area",
    "rng_seed": "--seed",
    "stop_after": "--stop-after",
    "feature_toggles": "--features",
}
_AUTO = "auto"


class UsageError(Exception):
    pass


class FileError(Exception):
    pass


def _optional(kind):
    def parse(text):
        return _AUTO if text.strip().lower() == _AUTO else kind(text)

    parse.__name__ = f"{kind.__name__} or {_AUTO}"
    return parse


def _toggles(text):
    items = frozenset(t.strip() for t in text.split(",") if t.strip())
    unknown = items - ALL_TOGGLES
    if unknown:
        raise ValueError(f"unknown feature {sorted(unknown)[0]!r}, choose from {','.join(sorted(ALL_TOGGLES))}")
    if not items:
        raise ValueError("feature list is empty")
    return items


def _stop(text):
    if text not in STOP_STAGES:
        raise ValueError(f"must be one of {', '.join(STOP_STAGES)}")
    return text


_PARSERS = {
    "t_cluster": _optional(float),
    "stride": _optional(int),
    "seed_window": _optional(int),
    "feature_toggles": _toggles,
    "stop_after": _stop,
}


def config_fields():
    """``{name: (parser, owner)}`` for every settable field; owner is
    ``"weights"`` or ``"pipeline"``."""
    out = {}
    for f in dataclasses.fields(FeatureWeights):
        out[f.name] = (float, "weights")
    for f in dataclasses.fields(PipelineConfig):
        if f.name == "weights":
            continue
        default = f.default
        parser = _PARSERS.get(f.name)
        if parser is None:
            parser = int if isinstance(default, int) and not isinstance(default, bool) else float
        out[f.name] = (parser, "pipeline")
    return out


def flag_for(name):
    return _NAMED_FLAGS.get(name, "--" + name.replace("_", "-"))


def parse_config_text(text, fields=None):
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    fields = config_fields() if fields is None else fields
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config: line {lineno}: expected key = value")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in fields:
            raise UsageError(f"config: line {lineno}: unknown key {key!r}")
        if key in values:
            raise UsageError(f"config: line {lineno}: duplicate key {key!r}")
        try:
            values[key] = fields[key][0](value)
        except ValueError as exc:
            raise UsageError(f"config: line {lineno}: bad value for {key}: {exc}") from None
    return values


def build_config(values, fields=None):
    fields = config_fields() if fields is None else fields
    weights = {k: v for k, v in values.items() if fields[k][1] == "weights"}
    rest = {k: v for k, v in values.items() if fields[k][1] == "pipeline"}
    try:
        return PipelineConfig(weights=FeatureWeights(**weights), **rest)
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from None


def _argtype(parser):
    # argparse prints ArgumentTypeError text verbatim
    def parse(text):
        try:
            return parser(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"{text!r}: {exc}") from None

    return parse


def build_parser():
    p = argparse.ArgumentParser(
        prog="sptransfer",
        description="Restyle an input photo after a reference photo using precomputed matches.",
    )
    p.add_argument("--input", required=True, help="input image (PNG or JPEG)")
    p.add_argument("--reference", required=True, help="reference image (PNG or JPEG)")
    p.add_argument("--matches", required=True, help="match file: x_in y_in x_ref y_ref score per line")
    p.add_argument("--output", required=True, help="output PNG")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--emit-intermediates", action="store_true", help="write figures and dumps next to the output")
    p.add_argument("--pre-scale", type=float, help="resize both images (and matches) by this factor first")
    group = p.add_argument_group("configuration overrides (same names as config-file keys)")
    for name, (parser, _) in config_fields().items():
        extra = {}
        if name == "stop_after":
            extra["choices"] = STOP_STAGES
            parser = str
        else:
            parser = _argtype(parser)
        group.add_argument(flag_for(name), dest=name, type=parser, default=None, metavar=name.upper(), **extra)
    return p


def load_image(path, label):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.format not in INPUT_FORMATS:
                raise FileError(f"{label}: unsupported image format {im.format} (use PNG or JPEG)")
            return from_uint8(np.asarray(im.convert("RGB")))
    except FileNotFoundError:
        raise FileError(f"{label}: no such file {path}") from None
    except UnidentifiedImageError:
        raise FileError(f"{label}: not a readable image: {path}") from None
    except OSError as exc:
        raise FileError(f"{label}: cannot read {path}: {exc}") from None


def resize(img, factor):
    from PIL import Image

    h, w = img.shape[:2]
    size = (max(1, round(w * factor)), max(1, round(h * factor)))
    pil = Image.fromarray(np.round(img * 255).astype(np.uint8)).resize(size, Image.LANCZOS)
    return from_uint8(np.asarray(pil))


def read_matches(path, input_dims, ref_dims):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FileError(f"matches: cannot read {path}: {exc.strerror or exc}") from None
    try:
        return corr.load_matches(data, input_dims, ref_dims)
    except corr.MatchError as exc:
        raise FileError(f"matches: {exc}") from None


def edge_lines(graph, shape_in, shape_ref):
    w_in, w_ref = shape_in[1], shape_ref[1]
    xp = graph.x_pixels[graph.x]
    yp = graph.y_pixels[graph.y]
    return "".join(
        f"{a // w_in} {a % w_in} {b // w_ref} {b % w_ref} {float(wt)!r}\n" for a, b, wt in zip(xp, yp, graph.weight)
    )


def write_intermediates(out_path, img_in, img_ref, result):
    from . import report as rp

    inter = result.intermediates
    stem = out_path.with_suffix("")
    written = []

    def target(tag, ext="png"):
        path = Path(f"{stem}.{tag}.{ext}")
        written.append(path)
        return path

    rp.save_figure(rp.match_overlay(img_in, img_ref, inter.matches), target("matches"))
    rp.save_png(rp.label_image(inter.seeds_in), target("seeds_input"))
    rp.save_png(rp.label_image(inter.seeds_ref), target("seeds_reference"))
    rp.save_png(rp.label_image(inter.labels_in), target("labels_input"))
    rp.save_png(rp.label_image(inter.labels_ref), target("labels_reference"))
    rp.save_figure(
        rp.labels_figure(img_in, img_ref, inter.labels_in, inter.labels_ref, inter.table), target("pairs")
    )
    rp.save_png(lab_to_rgb(inter.lab_prefilter), target("prefilter"))
    rp.save_figure(rp.summary_figure(result.report, img_in, img_ref, result.image, inter.labels_in, inter.labels_ref), target("summary"))
    target("corr", "txt").write_text(format_table(inter.table, inter.labels_in.n_superpixels))
    if inter.graph is not None:
        target("edges", "txt").write_text(edge_lines(inter.graph, img_in.shape, img_ref.shape))
    return written


def _execute(args):
    fields = config_fields()
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise UsageError(f"config: cannot read {args.config}: {exc}") from None
        values.update(parse_config_text(text, fields))
    values.update({k: getattr(args, k) for k in fields if getattr(args, k) is not None})
    # a flag given as "auto" means the automatic choice, not "unset"
    for k in ("t_cluster", "stride", "seed_window"):
        if k in values and values[k] == _AUTO:
            values[k] = None
    config = build_config(values, fields)

    out_path = Path(args.output)
    if out_path.suffix.lower() != ".png":
        raise UsageError("output: only PNG output is supported")
    if args.pre_scale is not None and not args.pre_scale > 0:
        raise UsageError("config: --pre-scale must be > 0")

    img_in = load_image(args.input, "input")
    img_ref = load_image(args.reference, "reference")
    matches = read_matches(args.matches, img_in.shape[:2], img_ref.shape[:2])
    if args.pre_scale is not None and args.pre_scale != 1:
        img_in = resize(img_in, args.pre_scale)
        img_ref = resize(img_ref, args.pre_scale)
        matches = matches.scaled(args.pre_scale, img_in.shape[:2], img_ref.shape[:2])

    try:
        result = run(img_in, img_ref, matches, config, intermediates=args.emit_intermediates)
    except StageError as exc:
        raise FileError(str(exc)) from None

    from PIL import Image

    from .imagecore import to_uint8

    try:
        Image.fromarray(to_uint8(result.image)).save(out_path, format="PNG")
        artifacts = [out_path]
        if args.emit_intermediates:
            artifacts += write_intermediates(out_path, img_in, img_ref, result)
    except OSError as exc:
        raise FileError(f"output: cannot write {exc.filename or out_path}: {exc.strerror or exc}") from None
    return result, artifacts


def main(argv=None, stdout=None, stderr=None):
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result, artifacts = _execute(args)
    except UsageError as exc:
        print(f"sptransfer: {exc}", file=stderr)
        return 2
    except FileError as exc:
        print(f"sptransfer: {exc}", file=stderr)
        return 1
    stdout.write(result.report.format())
    for path in artifacts:
        stdout.write(f"artifact\t{path}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
