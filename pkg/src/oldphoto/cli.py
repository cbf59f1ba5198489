"""Command line: ``oldphoto {synth,train,restore,evaluate,latent-gap}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
import argparse
import json
import sys

import torch

from . import pipeline
from .config import PipelineConfig, load_config, parse_config
from .errors import ConfigurationError, DataError, InvalidInputError, InvalidParameterError
from .metrics import evaluate_dirs, write_report

EXIT_CONFIG = 2
EXIT_DATA = 3


def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key=value config file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--checkpoint-dir", default=default)
    parser.add_argument("--debug-dumps", default=default, metavar="DIR",
                        help="write intermediate masks and faces here")
    parser.add_argument("--set", action="append", default=argparse.SUPPRESS if suppress else [],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="oldphoto", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize degraded training pairs")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--no-structured", action="store_true")
    p.add_argument("--no-unstructured", action="store_true")

    p = sub.add_parser("train", parents=[common], help="train one stage")
    p.add_argument("--stage", required=True, choices=pipeline.STAGES)
    p.add_argument("--resume", action="store_true", help="continue from the stage checkpoint")

    p = sub.add_parser("restore", parents=[common], help="restore a photo or a directory")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--with-scratch", action="store_true", help="run the defect detector")
    p.add_argument("--mask", help="defect mask sidecar (255 = defect)")
    p.add_argument("--face-boxes", help="face boxes sidecar, one 'x y w h' per line")
    p.add_argument("--threshold", type=float, help="detector probability threshold")

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM between two directories")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--out", help="write the JSON report here as well")

    p = sub.add_parser("latent-gap", parents=[common], help="sliced Wasserstein gap between latent sets")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--encoder", default="vae1", choices=("vae1", "vae2"))
    p.add_argument("--projections", type=int)
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.checkpoint_dir is not None:
        changes["checkpoint_dir"] = args.checkpoint_dir
    if getattr(args, "threshold", None) is not None:
        changes["threshold"] = args.threshold
    if getattr(args, "projections", None) is not None:
        changes["n_projections"] = args.projections
    if getattr(args, "no_structured", False):
        changes["structured"] = False
    if getattr(args, "no_unstructured", False):
        changes["unstructured"] = False
    return cfg.replace(**changes)


def run(args):
    cfg = resolve_config(args)
    torch.manual_seed(cfg.seed)
    if args.verb == "synth":
        manifest = pipeline.synth_dir(args.in_dir, args.out_dir, cfg)
        print(f"wrote {manifest['count']} triples to {args.out_dir} ({manifest['skipped']} skipped)")
    elif args.verb == "train":
        logs = pipeline.train_stage(args.stage, cfg, args.resume)
        logs = logs if isinstance(logs, list) else [logs]
        if not logs[-1].rows:
            print(f"stage {args.stage}: step budget already reached, nothing to do")
        else:
            last = logs[-1].rows[-1]
            print(f"stage {args.stage} finished at step {last['step']}: "
                  + ", ".join(f"{k}={v:.4g}" for k, v in last.items() if k != "step"))
    elif args.verb == "restore":
        written = pipeline.restore_paths(args.input, args.output, cfg, args.with_scratch,
                                         args.mask, args.face_boxes, args.debug_dumps)
        print(f"restored {len(written)} image(s)")
    elif args.verb == "evaluate":
        report = evaluate_dirs(args.pred_dir, args.gt_dir, cfg.to_dict())
        if args.out:
            write_report(report, args.out)
        print(report.to_json())
    elif args.verb == "latent-gap":
        print(json.dumps(pipeline.latent_gap(args.dir_a, args.dir_b, cfg, args.encoder), indent=2))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigurationError, InvalidParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
