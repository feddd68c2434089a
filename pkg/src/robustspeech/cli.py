"""Command-line entry point.

Commands: make-toy-corpus, mix, pretrain, continue, finetune, evaluate,
ablate, plot, pipeline. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import echo_config, load_config, model_config_from
from .datasynth import build_noisy_corpus
from .errors import DataError, NumericError, RobustSpeechError, UsageError
from .evaluation import DecodeConfig, evaluate
from .lm import CharNGramLM
from .manifest import load_manifest
from .reporting import plot_metrics, render_ablation_table, write_ablation_table
from .toycorpus import build_toy_corpus
from .training import TrainSpec, finetune, run_ablation, run_pretraining

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; route through UsageError
    so the documented exit code (1) applies."""

    def error(self, message):
        raise UsageError(message)


def _spec_from_config(section: dict, mode: str, data: str, seed: int,
                      init_checkpoint=None, resume_from=None, steps=None) -> TrainSpec:
    fields = dict(section)
    if steps is not None:
        fields["steps"] = steps
    return TrainSpec(mode=mode, data=str(data), seed=seed,
                     init_checkpoint=init_checkpoint, resume_from=resume_from,
                     **fields)


# -- command handlers ---------------------------------------------------------

def cmd_make_toy_corpus(args) -> int:
    clean, noise = build_toy_corpus(args.out, args.seed, args.n_utts, args.n_noise)
    print(f"clean manifest: {clean}")
    print(f"noise manifest: {noise}")
    return 0


def cmd_mix(args) -> int:
    clean = load_manifest(args.clean)
    noise = load_manifest(args.noise)
    paired = build_noisy_corpus(clean, noise, args.out, args.seed,
                                snr_low=args.snr_low, snr_high=args.snr_high)
    print(f"paired manifest: {Path(args.out) / 'pairs.jsonl'}")
    print(f"mixed utterances: {len(paired.entries)}")
    return 0


def _run_training_command(args, section_name: str, mode: str) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    echo_config(config, args.out)
    spec = _spec_from_config(config[section_name], mode, args.data, config["seed"],
                             init_checkpoint=getattr(args, "init", None),
                             resume_from=args.resume, steps=args.steps)
    model_cfg = model_config_from(config)
    if mode == "finetune":
        final = finetune(spec, args.out)
    else:
        final = run_pretraining(spec, args.out, model_cfg=model_cfg)
    print(f"final checkpoint: {final}")
    return 0


def cmd_pretrain(args) -> int:
    return _run_training_command(args, "pretrain", "pretrain")


def cmd_continue(args) -> int:
    return _run_training_command(args, "continual", "continual")


def cmd_finetune(args) -> int:
    return _run_training_command(args, "finetune", "finetune")


def cmd_evaluate(args) -> int:
    lm = None
    if args.lm and args.lm != "none":
        lm = CharNGramLM.load(args.lm)
    if args.beam > 0:
        decode_cfg = DecodeConfig(mode="beam", beam_size=args.beam, lm=lm,
                                  lm_weight=args.lm_weight,
                                  insertion_penalty=args.ins_penalty)
    else:
        decode_cfg = DecodeConfig(mode="greedy")
    result = evaluate(args.ckpt, args.manifest, decode_cfg, out_path=args.out)
    print(f"corpus WER: {result['corpus_wer']:.4f} "
          f"({result['utterances']} utterances, {result['failed']} failed)")
    if args.out:
        print(f"results: {args.out}")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    echo_config(config, args.out)
    model_cfg = model_config_from(config)
    continual_spec = _spec_from_config(config["continual"], "continual", args.data,
                                       config["seed"], init_checkpoint=args.init)
    finetune_spec = _spec_from_config(config["finetune"], "finetune", args.data,
                                      config["seed"], init_checkpoint=args.init)
    rows = run_ablation(model_cfg, continual_spec, finetune_spec,
                        args.eval_manifest or args.data, args.out)
    print(render_ablation_table(rows))
    failed = [row["cell"] for row in rows if "error" in row]
    if failed:
        raise DataError(f"ablation cells failed: {', '.join(failed)}")
    return 0


def cmd_plot(args) -> int:
    written = []
    if args.metrics:
        written.extend(plot_metrics(args.metrics, args.out))
    if args.ablation:
        written.append(write_ablation_table(args.ablation, args.out))
    if not written:
        raise UsageError("plot needs --metrics and/or --ablation")
    for path in written:
        print(f"wrote {path}")
    return 0


# -- pipeline -----------------------------------------------------------------

PIPELINE_STAGES = ("corpus", "mix", "pretrain", "continual", "finetune", "evaluate")


def _require(path: Path, stage: str, hint: str) -> Path:
    if not Path(path).exists():
        raise DataError(f"stage {stage}: missing {path} ({hint})")
    return Path(path)


def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    out = Path(args.out)
    echo_config(config, out)
    seed = config["seed"]
    stages = PIPELINE_STAGES if args.stage == "all" else (args.stage,)
    model_cfg = model_config_from(config)

    clean_manifest = out / "corpus" / "clean.jsonl"
    noise_manifest = out / "corpus" / "noise.jsonl"
    pairs_manifest = out / "noisy" / "pairs.jsonl"
    pretrain_ckpt = out / "pretrain" / "final.ckpt"
    continual_ckpt = out / "continual" / "final.ckpt"
    finetune_ckpt = out / "finetune" / "final.ckpt"
    summary = {"seed": seed}

    for stage in stages:
        logger.info("pipeline stage: %s", stage)
        try:
            if stage == "corpus":
                build_toy_corpus(out / "corpus", seed,
                                 config["corpus"]["n_utts"], config["corpus"]["n_noise"])
            elif stage == "mix":
                _require(clean_manifest, stage, "run the corpus stage first")
                build_noisy_corpus(load_manifest(clean_manifest),
                                   load_manifest(noise_manifest),
                                   out / "noisy", seed,
                                   snr_low=config["corpus"]["snr_low"],
                                   snr_high=config["corpus"]["snr_high"])
            elif stage == "pretrain":
                _require(clean_manifest, stage, "run the corpus stage first")
                spec = _spec_from_config(config["pretrain"], "pretrain",
                                         clean_manifest, seed)
                run_pretraining(spec, out / "pretrain", model_cfg=model_cfg)
            elif stage == "continual":
                _require(pairs_manifest, stage, "run the mix stage first")
                _require(pretrain_ckpt, stage, "run the pretrain stage first")
                spec = _spec_from_config(config["continual"], "continual",
                                         pairs_manifest, seed,
                                         init_checkpoint=str(pretrain_ckpt))
                run_pretraining(spec, out / "continual", model_cfg=model_cfg)
            elif stage == "finetune":
                _require(pairs_manifest, stage, "run the mix stage first")
                _require(continual_ckpt, stage, "run the continual stage first")
                spec = _spec_from_config(config["finetune"], "finetune",
                                         pairs_manifest, seed,
                                         init_checkpoint=str(continual_ckpt))
                finetune(spec, out / "finetune")
            elif stage == "evaluate":
                _require(pairs_manifest, stage, "run the mix stage first")
                _require(finetune_ckpt, stage, "run the finetune stage first")
                decode_cfg = DecodeConfig(
                    mode=config["decode"]["mode"],
                    beam_size=config["decode"]["beam_size"],
                    lm_weight=config["decode"]["lm_weight"],
                    insertion_penalty=config["decode"]["insertion_penalty"])
                result = evaluate(finetune_ckpt, pairs_manifest, decode_cfg,
                                  out_path=out / "eval" / "results.jsonl")
                summary["corpus_wer"] = result["corpus_wer"]
                summary["utterances"] = result["utterances"]
                print(f"corpus WER: {result['corpus_wer']:.4f}")
        except RobustSpeechError as exc:
            raise type(exc)(f"stage {stage}: {exc}") from exc
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"pipeline complete; summary: {out / 'summary.json'}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="robustspeech",
                     description="noise-robust speech representation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-corpus", help="synthesize a seeded micro-corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-utts", type=int, default=8)
    p.add_argument("--n-noise", type=int, default=3)
    p.set_defaults(func=cmd_make_toy_corpus)

    p = sub.add_parser("mix", help="mix clean utterances with noise at exact SNRs")
    p.add_argument("--clean", required=True, help="clean manifest")
    p.add_argument("--noise", required=True, help="noise manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-low", type=float, default=5.0)
    p.add_argument("--snr-high", type=float, default=20.0)
    p.set_defaults(func=cmd_mix)

    for name, handler, needs_init in (
            ("pretrain", cmd_pretrain, False),
            ("continue", cmd_continue, True),
            ("finetune", cmd_finetune, True)):
        p = sub.add_parser(name, help=f"{name} training stage")
        p.add_argument("--config", default=None)
        p.add_argument("--data", required=True, help="training manifest")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--resume", default=None, help="resume from a mid-run checkpoint")
        if needs_init:
            p.add_argument("--init", required=False, default=None,
                           help="initial checkpoint to warm-start from")
        p.set_defaults(func=handler)

    p = sub.add_parser("evaluate", help="decode a manifest and report WER")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="per-utterance results file")
    p.add_argument("--beam", type=int, default=0, help="beam size; 0 = greedy")
    p.add_argument("--lm", default="none", help="language model file, or 'none'")
    p.add_argument("--lm-weight", type=float, default=0.0)
    p.add_argument("--ins-penalty", type=float, default=0.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="reconstruction attachment/bottleneck matrix")
    p.add_argument("--config", default=None)
    p.add_argument("--init", required=True, help="pre-trained checkpoint")
    p.add_argument("--data", required=True, help="paired noisy/clean manifest")
    p.add_argument("--eval-manifest", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render loss curves / ablation table")
    p.add_argument("--metrics", default=None)
    p.add_argument("--ablation", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pipeline", help="corpus -> mix -> train -> evaluate")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stage", choices=("all",) + PIPELINE_STAGES, default="all")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except RobustSpeechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
