"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .. import corpus, dsp, features
from ..corpus import CharVocabulary, QualityLabel, Split
from ..errors import DataError, NumericalError, TooShortError
from ..gsttts import Text2Mel, train_tts
from ..musicfilter import MusicFilter, train_filter
from ..ssrn import Ssrn, train_ssrn
from . import experiment
from .config import VARIANTS, default_lambda, dump_config, load_config
from .embed import embed_export
from .synth import synthesize_wav

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("bgmtts")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_toy_corpus(args, cfg):
    path = corpus.make_toy_corpus(args.out, args.n, args.seed, n_speakers=args.speakers, prefix=args.prefix)
    print(path)


def cmd_toy_music(args, cfg):
    print(corpus.make_toy_music(args.out, args.n, args.seed, args.duration))


def cmd_mix(args, cfg):
    print(corpus.build_mixed_corpus(args.clean, args.music, args.out, (args.snr_lo, args.snr_hi),
                                    args.seed, args.workers, args.snr))


def cmd_train_filter(args, cfg):
    clean = {r.id: r for r in corpus.read_manifest(args.clean)}
    pairs = []
    for r in corpus.read_manifest(args.noisy):
        if r.id not in clean:
            raise DataError(f"noisy utterance {r.id} has no clean counterpart")
        pairs.append((corpus.load_audio(r), corpus.load_audio(clean[r.id])))
    f = cfg.filter
    steps = args.steps if args.steps is not None else f.steps
    train_filter(pairs, f.model, f.optim, steps, f.batch_size, f.crop_frames, seed=args.seed,
                 checkpoint_path=args.out, log_path=args.log)
    print(args.out)


def cmd_filter(args, cfg):
    mf = MusicFilter.load(args.checkpoint)
    if args.manifest:
        print(corpus.filter_corpus(corpus.read_manifest(args.manifest), mf, args.out))
    else:
        out = mf.infer_file(dsp.read_wav(args.wav))
        dsp.write_wav(args.out, out)
        print(args.out)


def cmd_split(args, cfg):
    clean = corpus.read_manifest(args.clean)
    degraded = corpus.read_manifest(args.degraded)
    hours = corpus.total_hours(clean)
    clean_hours = args.clean_hours if args.clean_hours is not None else args.clean_fraction * hours
    out = corpus.split_by_clean_hours(clean, degraded, clean_hours, hours, args.seed, args.test_fraction)
    print(corpus.write_manifest(args.out, out))


def _train_records(manifest):
    recs = [r for r in corpus.read_manifest(manifest) if r.split is Split.TRAIN]
    if not recs:
        raise DataError(f"{manifest} has no TRAIN records")
    return recs


def cmd_train_tts(args, cfg):
    recs = _train_records(args.manifest)
    use_gst = args.variant != "TTS"
    lam = args.lam
    if lam is None:
        frac = sum(r.duration_s for r in recs if r.quality is QualityLabel.CLEAN) / sum(r.duration_s for r in recs)
        lam = (cfg.tts.lam if cfg.tts.lam is not None else default_lambda(frac)) if args.variant.endswith("Aux") else 0.0
    if lam > 0 and not args.variant.endswith("Aux"):
        raise UsageError(f"variant {args.variant} trains without the quality classifier; drop --lam")
    waves = [corpus.load_audio(r) for r in recs]
    mel_stats, _ = features.fit_stats(waves)
    vocab = CharVocabulary.from_texts(r.transcript for r in recs)
    examples = features.tts_examples(recs, vocab, mel_stats, cfg.tts.model.downsample)
    model_cfg = dataclasses.replace(cfg.tts.model, vocab_size=len(vocab), use_gst=use_gst)
    steps = args.steps if args.steps is not None else cfg.tts.steps
    train_tts(examples, model_cfg, vocab, mel_stats, lam, steps, cfg.tts.batch_size, cfg.tts.optim,
              seed=args.seed, log_path=args.log, checkpoint_path=args.out)
    print(args.out)


def cmd_train_ssrn(args, cfg):
    recs = _train_records(args.manifest)
    s = cfg.ssrn
    waves = experiment.ssrn_waveforms(recs, s.model.universal_speakers)
    mel_stats, mag_stats = features.fit_stats(waves)
    examples = features.ssrn_examples(waves, mel_stats, mag_stats, s.model.upsample)
    steps = args.steps if args.steps is not None else s.steps
    train_ssrn(examples, s.model, mel_stats, mag_stats, steps, s.batch_size, s.crop, s.optim,
               seed=args.seed, log_path=args.log, checkpoint_path=args.out)
    print(args.out)


def cmd_synth(args, cfg):
    t2m = Text2Mel.load(args.t2m)
    ssrn = Ssrn.load(args.ssrn)
    out = synthesize_wav(t2m, ssrn, args.text, dsp.read_wav(args.ref), seed=args.seed,
                         max_frames=args.max_frames, gl_iters=args.gl_iters)
    dsp.write_wav(args.out, out.waveform)
    print(json.dumps({"out": str(args.out), "frames": int(out.result.mel.shape[0]),
                      "completed": out.result.completed, "duration_s": out.waveform.duration}))


def cmd_embed_export(args, cfg):
    t2m = Text2Mel.load(args.checkpoint)
    recs = corpus.read_manifest(args.manifest)
    if args.split:
        recs = [r for r in recs if r.split.value == args.split]
    mels = [features.coarse_mel(corpus.load_audio(r), t2m.mel_stats, t2m.config.downsample) for r in recs]
    if len(recs) < 3:
        raise DataError(f"embedding export needs at least 3 utterances, got {len(recs)}")
    summary = embed_export([r.id for r in recs], [r.quality.value for r in recs], t2m.embed(mels), args.out)
    print(json.dumps(experiment.jsonable(summary)))


def cmd_eval(args, cfg):
    if args.variants:
        cfg = dataclasses.replace(cfg, ablation=dataclasses.replace(cfg.ablation, variants=args.variants))
    if args.clean_fractions:
        cfg = dataclasses.replace(cfg, ablation=dataclasses.replace(cfg.ablation, clean_fractions=args.clean_fractions))
    report = experiment.run_pipeline(cfg, args.workdir, workers=args.workers, with_ssrn=args.ssrn)
    path = report.save(args.out) if args.out else Path(args.workdir) / "report.json"
    summary = {c["name"]: c["status"] for c in report.cells}
    print(json.dumps({"report": str(path), "cells": summary}))


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def common_options(suppress: bool):
        # subcommand copies must not clobber values given before the subcommand
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--seed", type=int, **({"default": 0} | kw))
        c.add_argument("--config", type=Path, help="JSON file overriding the default configuration", **kw)
        c.add_argument("--print-config", action="store_true",
                       help="print the effective configuration and exit", **kw)
        c.add_argument("-v", "--verbose", action="store_true", **kw)
        return c

    common = common_options(False)
    sub_common = common_options(True)

    p = _Parser(prog="bgmtts", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter,
                parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, parents=[sub_common])
        sp.set_defaults(fn=fn)
        return sp

    sp = add("toy-corpus", cmd_toy_corpus, "render a synthetic clean speech corpus")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--speakers", type=int, default=1)
    sp.add_argument("--prefix", default="utt")

    sp = add("toy-music", cmd_toy_music, "render synthetic background music")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--duration", type=float, default=6.0)

    sp = add("mix", cmd_mix, "mix clean speech with music at random SNRs")
    sp.add_argument("--clean", required=True, type=Path, help="clean manifest")
    sp.add_argument("--music", required=True, type=Path, help="directory of music .wav files")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--snr-lo", type=float, default=0.0)
    sp.add_argument("--snr-hi", type=float, default=20.0)
    sp.add_argument("--snr", type=float, default=None, help="fixed SNR instead of a random one")
    sp.add_argument("--workers", type=int, default=1)

    sp = add("train-filter", cmd_train_filter, "train the music filter on noisy/clean pairs")
    sp.add_argument("--clean", required=True, type=Path)
    sp.add_argument("--noisy", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--log", type=Path)

    sp = add("filter", cmd_filter, "remove background music from a manifest or a single file")
    sp.add_argument("--checkpoint", required=True, type=Path)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path)
    src.add_argument("--wav", type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = add("split", cmd_split, "build a TTS training manifest with a given amount of clean speech")
    sp.add_argument("--clean", required=True, type=Path)
    sp.add_argument("--degraded", required=True, type=Path)
    amount = sp.add_mutually_exclusive_group(required=True)
    amount.add_argument("--clean-hours", type=float)
    amount.add_argument("--clean-fraction", type=float)
    sp.add_argument("--test-fraction", type=float, default=0.01)
    sp.add_argument("--out", required=True, type=Path)

    sp = add("train-tts", cmd_train_tts, "train Text2Mel on a split manifest")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--variant", choices=VARIANTS, default="GST+MF+Aux")
    sp.add_argument("--lam", type=float, help="quality-classifier loss weight (default: by clean ratio)")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--log", type=Path)

    sp = add("train-ssrn", cmd_train_ssrn, "train the spectrogram super-resolution network")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--log", type=Path)

    sp = add("synth", cmd_synth, "synthesise a sentence with a clean reference recording")
    sp.add_argument("--text", required=True)
    sp.add_argument("--ref", required=True, type=Path)
    sp.add_argument("--t2m", required=True, type=Path)
    sp.add_argument("--ssrn", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--max-frames", type=int, default=200)
    sp.add_argument("--gl-iters", type=int, default=60)

    sp = add("embed-export", cmd_embed_export, "export quality embeddings and their PCA projection as CSV")
    sp.add_argument("--checkpoint", required=True, type=Path)
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--split", choices=[s.value for s in Split])
    sp.add_argument("--out", required=True, type=Path)

    sp = add("eval", cmd_eval, "run the corpus → filter → ablation pipeline and write a JSON report")
    sp.add_argument("--workdir", required=True, type=Path)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--variants", nargs="+", choices=VARIANTS)
    sp.add_argument("--clean-fractions", nargs="+", type=float)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--ssrn", action="store_true", help="also train the SSRN")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = dataclasses.replace(cfg, seed=args.seed)
    except (KeyError, TypeError, ValueError) as e:
        print(f"bgmtts: bad config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"bgmtts: cannot read config: {e}", file=sys.stderr)
        return EXIT_DATA
    if args.print_config:
        print(dump_config(cfg))
        return EXIT_OK
    if getattr(args, "fn", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    try:
        args.fn(args, cfg)
    except UsageError as e:
        print(f"bgmtts: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"bgmtts: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TooShortError, OSError, ValueError, KeyError) as e:
        print(f"bgmtts: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
