"""Command-line interface: ``mixedrc <command> [flags]``.

Configuration is layered: built-in defaults < JSON config file (``--config``)
< ``MIXEDRC_<FLAG>`` environment variables < command-line flags.  A config
file is either a flat ``{"flag_name": value}`` object or a run manifest, in
which case its ``config`` block is used, so any run can be replayed with
``mixedrc <command> --config <manifest>``.

Exit codes: 0 success, 2 usage error (bad flags, missing inputs), 1 runtime
failure.  Errors are printed to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

ENV_PREFIX = "MIXEDRC_"
EXIT_RUNTIME = 1
EXIT_USAGE = 2
# flags that never come from a config file or the environment
_META = {"config", "command", "manifest"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file or run manifest")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--deterministic", action="store_true",
                   help="single thread, deterministic kernels, no worker processes")
    p.add_argument("--manifest", default=None,
                   help="manifest path; next to the primary output when unset")


def _codec(p: argparse.ArgumentParser) -> None:
    p.add_argument("--codec", choices=("toy", "external"), default="toy", help="codec adapter")
    p.add_argument("--encode-cmd", default=None,
                   help="external encoder template with {in} {out} {qp} {w} {h}")
    p.add_argument("--decode-cmd", default=None, help="external decoder template with {in} {out}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="mixedrc", description="Mixed-resolution video coding and restoration.",
                     formatter_class=fmt, allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"mixedrc {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt,
                           allow_abbrev=False)
        _common(p)
        return p

    p = cmd("encode", "encode a clip into a mixed-resolution container")
    p.add_argument("--in", dest="input", required=True, help="source .y4m or PNG directory")
    p.add_argument("--out", required=True, help="output container (.mxrc)")
    p.add_argument("--scale", type=int, choices=(2, 4), default=2, help="down-scaling factor r")
    p.add_argument("--gop", type=int, default=16, help="GOP length")
    p.add_argument("--qp", type=int, default=37, help="base-layer QP")
    p.add_argument("--el-qp", type=int, default=28, help="key-frame (enhancement layer) QP")
    _codec(p)

    p = cmd("decode", "decode a container into LR frames and key-frames")
    p.add_argument("--in", dest="input", required=True, help="container (.mxrc)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bicubic", action="store_true",
                   help="also write the bicubic upsample of the base layer")
    _codec(p)

    p = cmd("restore", "decode and restore a container at full resolution")
    p.add_argument("--in", dest="input", required=True, help="container (.mxrc)")
    p.add_argument("--model", required=True, help="R3N checkpoint, or 'bicubic' for the baseline")
    p.add_argument("--out", required=True, help="output .y4m or PNG directory")
    p.add_argument("--batch-size", type=int, default=4, help="frames per forward pass")
    _codec(p)

    p = cmd("train", "train R3N on synthetic clips")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=("desk", "full"), default="desk", help="training preset")
    p.add_argument("--scale", type=int, choices=(2, 4), default=2, help="up-scaling factor r")
    p.add_argument("--channels", type=int, choices=(1, 3), default=1, help="colour channels")
    p.add_argument("--curriculum", type=_csv_ints, default=None,
                   help="d_max per stage, e.g. 8,16,24,32; preset value when unset")
    p.add_argument("--scratch", action="store_true",
                   help="train one stage at the last d_max for the same total steps")
    p.add_argument("--steps-per-stage", type=int, default=None, help="preset value when unset")
    p.add_argument("--batch-size", type=int, default=None, help="preset value when unset")
    p.add_argument("--patch-size", type=int, default=None, help="preset value when unset")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate; preset value when unset")
    p.add_argument("--lambda-distan", type=float, default=0.1, help="disentangled loss weight")
    p.add_argument("--qp", type=int, default=37, help="base-layer QP of the training data")
    p.add_argument("--offset-mode", choices=("refined", "stacked"), default="refined",
                   help="alignment offset estimation")
    p.add_argument("--attention", choices=("spatial", "channel", "none"), default="spatial",
                   help="attention in the Incep-HDC blocks")
    p.add_argument("--workers", type=int, default=0, help="data-generation worker processes")

    p = cmd("eval", "PSNR/SSIM of a restored clip against the source")
    p.add_argument("--ref", required=True, help="source .y4m or PNG directory")
    p.add_argument("--test", required=True, help="restored .y4m or PNG directory")
    p.add_argument("--out", default="metrics.csv", help="per-frame metrics CSV")

    p = cmd("bdrate", "BD-rate between two RD curves")
    p.add_argument("--anchor", required=True, help="anchor RD CSV")
    p.add_argument("--test", required=True, help="test RD CSV")
    p.add_argument("--method", choices=("cubic", "pchip"), default="cubic", help="curve fit")
    p.add_argument("--anchor-label", default=None, help="curve label in the anchor CSV")
    p.add_argument("--test-label", default=None, help="curve label in the test CSV")

    p = cmd("rdsweep", "encode/restore a clip at several QPs and write an RD curve")
    p.add_argument("--in", dest="input", required=True, help="source .y4m or PNG directory")
    p.add_argument("--out", required=True, help="RD CSV path (a .json twin is written too)")
    p.add_argument("--qps", type=_csv_ints, default=[22, 27, 32, 37], help="QP list")
    p.add_argument("--model", default="bicubic", help="R3N checkpoint or 'bicubic'")
    p.add_argument("--scale", type=int, choices=(2, 4), default=2, help="down-scaling factor r")
    p.add_argument("--gop", type=int, default=16, help="GOP length")
    p.add_argument("--el-qp", type=int, default=None, help="key-frame QP; same as the sweep QP when unset")
    p.add_argument("--fps", type=float, default=None, help="frame rate; taken from the source when unset")
    p.add_argument("--label", default=None, help="curve label; model name when unset")
    _codec(p)

    p = cmd("analyze", "render the artifact/texture/flat map of a frame")
    p.add_argument("--lr", required=True, help="compressed LR frame (PNG)")
    p.add_argument("--gt", required=True, help="ground-truth HR frame (PNG)")
    p.add_argument("--out", required=True, help="output PNG map")
    p.add_argument("--scale", type=int, default=2, help="ratio between the two frames")

    p = cmd("synth", "generate a synthetic textured moving clip")
    p.add_argument("--out", required=True, help="output .y4m or PNG directory")
    p.add_argument("--frames", type=int, default=32, help="frame count")
    p.add_argument("--size", type=int, default=64, help="frame height and width")
    p.add_argument("--channels", type=int, choices=(1, 3), default=1, help="colour channels")
    p.add_argument("--max-speed", type=float, default=0.75, help="pixels per frame")

    # required flags may also come from a config file or the environment, so
    # they are checked after layering instead of by argparse
    for sp in subparsers(parser).values():
        sp.required_flags = {}
        for action in sp._actions:
            if action.required and action.option_strings:
                action.required = False
                action.help += " (required)"
                sp.required_flags[action.dest] = action.option_strings[0]
    return parser


def subparsers(parser: argparse.ArgumentParser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


# ---------------------------------------------------------------------------
# layered configuration
# ---------------------------------------------------------------------------

def _explicit(p: argparse.ArgumentParser, argv: list[str]) -> set:
    given = set()
    for action in p._actions:
        for opt in action.option_strings:
            if any(a == opt or a.startswith(opt + "=") for a in argv):
                given.add(action.dest)
    return given


def _coerce(action: argparse.Action, raw):
    if isinstance(action, argparse._StoreTrueAction):
        if isinstance(raw, str):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return bool(raw)
    if isinstance(raw, str) and action.type is not None:
        return action.type(raw)
    if isinstance(raw, list) and action.type is _csv_ints:
        return [int(v) for v in raw]
    return raw


def resolve(argv: list[str], environ=None) -> argparse.Namespace:
    """Parse ``argv`` and apply file and environment layers below explicit flags."""
    environ = os.environ if environ is None else environ
    parser = build_parser()
    args = parser.parse_args(argv)
    sp = subparsers(parser)[args.command]
    given = _explicit(sp, argv)
    actions = {a.dest: a for a in sp._actions if a.option_strings and a.dest != "help"}
    layer = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
        if isinstance(data.get("config"), dict):
            if data.get("command") not in (None, args.command):
                raise UsageError(f"manifest is for '{data['command']}', not '{args.command}'")
            data = data["config"]
        for key, value in data.items():
            dest = key.replace("-", "_")
            if dest not in actions:
                raise UsageError(f"unknown key '{key}' in config file {path}")
            layer[dest] = value
    for dest in actions:
        env = environ.get(ENV_PREFIX + dest.upper())
        if env is not None:
            layer[dest] = env
    for dest, raw in layer.items():
        if dest in given or dest in _META:
            continue
        try:
            setattr(args, dest, _coerce(actions[dest], raw))
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"bad value for {dest}: {exc}")
        choices = actions[dest].choices
        if choices is not None and getattr(args, dest) not in choices:
            raise UsageError(f"{dest} must be one of {list(choices)}, got {getattr(args, dest)!r}")
    missing = [flag for dest, flag in sp.required_flags.items() if getattr(args, dest) is None]
    if missing:
        raise UsageError(f"the following arguments are required: {', '.join(missing)}")
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k not in _META}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _need(path, what: str = "input") -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _adapter(args):
    from .chain import ExternalAdapter, ToyAdapter
    if args.codec == "toy":
        return ToyAdapter()
    if not args.encode_cmd or not args.decode_cmd:
        raise UsageError("--codec external needs --encode-cmd and --decode-cmd")
    return ExternalAdapter(args.encode_cmd, args.decode_cmd)


def _stream_adapter(args):
    # decoders read the adapter from the container unless one is forced
    return _adapter(args) if args.codec == "external" else None


def _load_model(spec: str):
    if spec == "bicubic":
        return None
    from .r3n import load_checkpoint
    model, _ = load_checkpoint(_need(spec, "model checkpoint"))
    return model


def _manifest_path(args, primary: Path) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if primary.suffix and not primary.is_dir():
        return primary.with_name(primary.name + ".manifest.json")
    return primary / "manifest.json"


def write_manifest(args, inputs: list, outputs: list, timings: dict, extra=None) -> Path:
    import torch
    path = _manifest_path(args, Path(outputs[0]))
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "config": resolved_config(args),
        "seed": args.seed,
        "version": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "timings": timings,
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_encode(args) -> dict:
    from .chain import encode_mixed
    from .chain.frameio import read_clip
    clip, fps = read_clip(_need(args.input))
    stream = encode_mixed(clip, args.scale, args.gop, args.qp, args.el_qp, _adapter(args))
    data = stream.to_bytes()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    print(json.dumps({"bytes": len(data), "el_bytes": sum(map(len, stream.el)),
                      "bl_bytes": sum(map(len, stream.bl)),
                      "gops": stream.layout.gop_count, "frames": len(clip)}))
    return {"inputs": [args.input], "outputs": [out]}


def cmd_decode(args) -> dict:
    from .chain import decode_mixed
    from .chain.frameio import write_png_dir
    from . import imgops
    data = _need(args.input).read_bytes()
    lr, refs, layout = decode_mixed(data, _stream_adapter(args))
    out = Path(args.out)
    write_png_dir(out / "lr", lr)
    write_png_dir(out / "ref", np.stack(refs)[..., : layout.height, : layout.width])
    if args.bicubic:
        up = imgops.bicubic_resize(lr, layout.scale)[..., : layout.height, : layout.width]
        write_png_dir(out / "bicubic", up)
    print(json.dumps({"frames": len(lr), "refs": len(refs), "scale": layout.scale}))
    return {"inputs": [args.input], "outputs": [out]}


def cmd_restore(args) -> dict:
    from .chain import bicubic_baseline, restore_stream
    from .chain.frameio import write_clip
    data = _need(args.input).read_bytes()
    model = _load_model(args.model)
    per_frame: list[float] = []
    if model is None:
        tic = time.perf_counter()
        hr = bicubic_baseline(data, _stream_adapter(args))
        per_frame = [(time.perf_counter() - tic) / len(hr)] * len(hr)
    else:
        hr = restore_stream(data, model, _stream_adapter(args), args.batch_size, per_frame)
    write_clip(args.out, hr)
    for i, t in enumerate(per_frame):
        print(json.dumps({"frame": i, "seconds": round(t, 6)}))
    print(json.dumps({"frames": len(hr), "mean_seconds_per_frame": float(np.mean(per_frame))}))
    return {"inputs": [args.input, args.model], "outputs": [Path(args.out)],
            "timings": {"per_frame_s": per_frame}}


def cmd_train(args) -> dict:
    import dataclasses
    from .r3n import R3NConfig
    from .train import DESK, FULL_SCALE, desk_model_config, run_curriculum, run_training
    base = DESK if args.preset == "desk" else FULL_SCALE
    over = {"seed": args.seed, "lambda_distan": args.lambda_distan, "qp": args.qp,
            "workers": 0 if args.deterministic else args.workers}
    for flag, key in (("curriculum", "curriculum"), ("steps_per_stage", "steps_per_stage"),
                      ("batch_size", "batch_size"), ("patch_size", "patch_size"), ("lr", "lr0")):
        if getattr(args, flag) is not None:
            over[key] = getattr(args, flag)
    cfg = dataclasses.replace(base, **over)
    if args.preset == "desk":
        mcfg = desk_model_config(args.scale, args.channels)
    else:
        mcfg = R3NConfig(scale=args.scale, temporal_radius=1 if args.scale == 2 else 2,
                         channels=args.channels)
    mcfg = dataclasses.replace(mcfg, align=dataclasses.replace(
        mcfg.align, offset_mode=args.offset_mode, attention=args.attention))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scratch:
        steps = cfg.steps_per_stage * len(cfg.curriculum)
        _, ev = run_training(cfg, mcfg, cfg.curriculum[-1], steps, out)
        report = [{"stage": 0, "d_max": cfg.curriculum[-1], "steps": steps, **ev}]
        (out / "report.json").write_text(json.dumps(report, indent=2))
        ckpt = out / "final.r3n"
    else:
        _, report = run_curriculum(cfg, mcfg, out)
        ckpt = Path(report[-1]["checkpoint"])
    for row in report:
        print(json.dumps({k: row[k] for k in ("stage", "d_max", "psnr", "l1")}))
    return {"inputs": [], "outputs": [out, ckpt], "extra": {"train": cfg.to_dict(),
                                                            "model": mcfg.to_dict()}}


def cmd_eval(args) -> dict:
    import csv
    from .chain.frameio import read_clip
    from .evaluation import psnr, ssim
    ref, _ = read_clip(_need(args.ref, "reference"))
    test, _ = read_clip(_need(args.test, "test clip"))
    if ref.shape != test.shape:
        raise ValueError(f"clip shapes differ: reference {ref.shape} vs test {test.shape}")
    rows = [{"frame": i, "psnr_db": psnr(t, r), "ssim": ssim(t, r)}
            for i, (r, t) in enumerate(zip(ref, test))]
    summary = {"frame": "mean", "psnr_db": psnr(test, ref), "ssim": ssim(test, ref)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=("frame", "psnr_db", "ssim"))
        wr.writeheader()
        wr.writerows(rows + [summary])
    print(json.dumps({"psnr_db": summary["psnr_db"], "ssim": summary["ssim"]}))
    return {"inputs": [args.ref, args.test], "outputs": [out]}


def _pick(curves, label, path):
    if label is None:
        if len(curves) != 1:
            raise UsageError(f"{path} holds {len(curves)} curves; choose one with a --*-label flag")
        return curves[0]
    for c in curves:
        if c.label == label:
            return c
    raise UsageError(f"no curve labelled {label!r} in {path}")


def cmd_bdrate(args) -> dict:
    from .evaluation import bd_rate, read_csv
    anchor = _pick(read_csv(_need(args.anchor, "anchor CSV")), args.anchor_label, args.anchor)
    test = _pick(read_csv(_need(args.test, "test CSV")), args.test_label, args.test)
    value = bd_rate(anchor, test, args.method)
    print(f"BD-rate: {value:.2f}%")
    out = Path(args.manifest) if args.manifest else Path(args.test)
    return {"inputs": [args.anchor, args.test], "outputs": [out], "extra": {"bd_rate": value}}


def cmd_rdsweep(args) -> dict:
    from .chain.frameio import read_clip
    from .evaluation import bicubic_restorer, model_restorer, rd_sweep, write_csv, write_json
    clip, fps = read_clip(_need(args.input))
    model = _load_model(args.model)
    restorer = bicubic_restorer if model is None else model_restorer(model)
    label = args.label or ("bicubic" if model is None else Path(args.model).stem)
    curve = rd_sweep(clip, args.qps, restorer, args.scale, args.gop, args.el_qp,
                     float(args.fps or fps), label, _adapter(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, curve)
    write_json(out.with_suffix(".json"), curve)
    for row in curve.rows():
        print(json.dumps(row))
    return {"inputs": [args.input, args.model], "outputs": [out, out.with_suffix(".json")]}


def _read_png(path) -> np.ndarray:
    from PIL import Image
    from . import imgops
    img = np.asarray(Image.open(_need(path)))
    img = img[None] if img.ndim == 2 else np.moveaxis(img[..., :3], -1, 0)
    return imgops.to_float(img)


def cmd_analyze(args) -> dict:
    from PIL import Image
    from . import texture
    x, y = _read_png(args.lr), _read_png(args.gt)
    cfg = texture.LossConfig(scale=args.scale)
    d = texture.analysis_map(y, x, cfg)
    rgb = texture.render_map(d)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(out)
    d = np.asarray(d)
    counts = {"artifact": int((d == texture.ARTIFACT).sum()),
              "texture": int((d == texture.TEXTURE).sum()),
              "flat": int((d == texture.FLAT).sum())}
    print(json.dumps(counts))
    return {"inputs": [args.lr, args.gt], "outputs": [out], "extra": {"counts": counts}}


def cmd_synth(args) -> dict:
    from .chain.frameio import write_clip
    from .train import MotionSpec, synth_clip
    clip = synth_clip(args.frames, args.size, args.channels, args.seed,
                      MotionSpec(max_speed=args.max_speed))
    write_clip(args.out, clip, Fraction(25))
    print(json.dumps({"frames": args.frames, "shape": list(clip.shape[1:])}))
    return {"inputs": [], "outputs": [Path(args.out)]}


COMMANDS = {
    "encode": cmd_encode, "decode": cmd_decode, "restore": cmd_restore, "train": cmd_train,
    "eval": cmd_eval, "bdrate": cmd_bdrate, "rdsweep": cmd_rdsweep, "analyze": cmd_analyze,
    "synth": cmd_synth,
}


def _fail(kind: str, exc: BaseException | str, code: int) -> int:
    msg = str(exc).replace("\n", " ")
    payload = {"error": kind, "message": msg}
    if isinstance(exc, BaseException):
        payload["type"] = type(exc).__name__
    print(json.dumps(payload), file=sys.stderr)
    return code


def _set_deterministic(args) -> None:
    import torch
    torch.manual_seed(args.seed)
    np.random.seed(args.seed % 2**32)
    if args.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = resolve(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    tic = time.perf_counter()
    try:
        _set_deterministic(args)
        result = COMMANDS[args.command](args)
        timings = {"wall_s": round(time.perf_counter() - tic, 4), **result.get("timings", {})}
        write_manifest(args, result["inputs"], result["outputs"], timings, result.get("extra"))
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except Exception as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
