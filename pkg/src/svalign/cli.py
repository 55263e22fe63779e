"""Command-line front end.

Every subcommand reads the standard file formats, calls the library and
writes results sorted in a fixed order, so repeated runs (with any thread
count) produce identical bytes. Options may also come from a JSON file given
with ``--config``; explicit flags win over the file, the file over defaults.

Exit codes: 0 success, 1 data or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    DocumentPair,
    EmbeddingMatrix,
    read_alignments,
    read_embeddings,
    read_pairs,
    read_segments,
    write_alignments,
    write_embeddings,
    write_pairs,
    write_segments,
    write_sidecar,
)
from .evaluate import duration_stats, order_stats, score_pr
from .fbank import FbankConfig, compute_fbank, cut, read_wav, write_wav
from .mining import global_mine, local_mine
from .overlaps import OverlapConfig, blacklist_matrix, build_overlaps
from .pipeline import AudioStore, align_pairs, blacklists, detect_pairs, read_detections, resolve_threads, write_detections
from .postprocess import PostConfig, run_postprocess
from .synth import BLOCK_KINDS, SynthConfig, generate, sigma_for_cosine
from .vecalign import AlignParams

logger = logging.getLogger("svalign")

DEFAULT_BUCKETS = "2,4,6,8,10,12,14,16,18,20"


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_range(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        vals = [int(x) for x in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO,HI, got {text!r}") from None
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) == 2:
        return vals[0], vals[1]
    raise argparse.ArgumentTypeError(f"expected N or LO,HI, got {text!r}")


def _write_meta(out: Path, **fields) -> None:
    path = Path(str(out) + ".meta.json")
    path.write_text(json.dumps(fields, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _load_matrix(path: str, sidecar: str | None, max_count: int | None = None) -> EmbeddingMatrix:
    m = read_embeddings(path, sidecar)
    if max_count is not None:
        m = m.subset([r for r, k in enumerate(m.keys) if k.count <= max_count])
    return m


def _apply_blacklist(args, src: EmbeddingMatrix, tgt: EmbeddingMatrix):
    if not getattr(args, "blacklist", None):
        return src, tgt
    src_bl, tgt_bl = blacklists(read_detections(args.blacklist))
    logger.info("blacklisting %d source and %d target segments",
                sum(map(len, src_bl.values())), sum(map(len, tgt_bl.values())))
    return blacklist_matrix(src, src_bl), blacklist_matrix(tgt, tgt_bl)


# --------------------------------------------------------------------------
# parser


def _fbank_options(p: argparse.ArgumentParser) -> None:
    d = FbankConfig()
    g = p.add_argument_group("filterbank")
    g.add_argument("--sample-rate", type=int, default=d.sample_rate)
    g.add_argument("--num-mel-bins", type=int, default=d.n_mels)
    g.add_argument("--frame-length", type=float, default=d.frame_length, help="seconds")
    g.add_argument("--frame-shift", type=float, default=d.frame_shift, help="seconds")
    g.add_argument("--preemphasis", type=float, default=d.preemphasis)
    g.add_argument("--low-freq", type=float, default=d.low_freq)
    g.add_argument("--high-freq", type=float, default=d.high_freq, help="<= 0 is an offset from Nyquist")
    g.add_argument("--window-type", default=d.window, choices=["hann", "hamming", "povey", "rectangular"])
    g.add_argument("--keep-dc-offset", action="store_true", help="do not subtract the frame mean")


def _fbank_config(args) -> FbankConfig:
    return FbankConfig(
        sample_rate=args.sample_rate, n_mels=args.num_mel_bins, frame_length=args.frame_length,
        frame_shift=args.frame_shift, preemphasis=args.preemphasis, low_freq=args.low_freq,
        high_freq=args.high_freq, window=args.window_type, remove_dc_offset=not args.keep_dc_offset,
    )


def _embedding_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--src-emb", required=True, help="source embedding file (sidecar at <path>.tsv)")
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--src-sidecar", default=None)
    p.add_argument("--tgt-sidecar", default=None)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (keys are option names)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (env SVALIGN_THREADS)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="svalign", description="Segment-level alignment of parallel speech documents.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name, help_):
        subs[name] = sub.add_parser(name, help=help_, description=help_, parents=[common])
        return subs[name]

    p = add("fbank", "Log-mel filterbank of a WAV file (or a slice of it) as .npy.")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start", type=float, default=None)
    p.add_argument("--end", type=float, default=None)
    _fbank_options(p)

    p = add("detect-identical", "Find segments whose source and target audio are the same recording.")
    p.add_argument("--pairs", required=True)
    p.add_argument("--src-segments", required=True)
    p.add_argument("--tgt-segments", required=True)
    p.add_argument("--audio-dir", required=True, help="directory holding <doc_id>.wav")
    p.add_argument("--out", required=True)
    p.add_argument("--dur-thresh", type=float, default=0.1)
    p.add_argument("--sim-thresh", type=float, default=5.0)
    _fbank_options(p)

    p = add("overlaps", "Enumerate overlap segments as an embedding sidecar TSV.")
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-count", type=int, default=5)
    p.add_argument("--max-duration", type=float, default=20.0)

    p = add("align", "Monotone alignment of every document pair.")
    p.add_argument("--pairs", required=True)
    _embedding_inputs(p)
    p.add_argument("--blacklist", default=None, help="detect-identical output; those segments get zero vectors")
    p.add_argument("--out", required=True)
    p.add_argument("--sample-size", type=int, default=128)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--base-size", type=int, default=128)
    p.add_argument("--del-percentile", type=float, default=20.0)
    p.add_argument("--max-block", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    for name, help_ in (("mine-local", "Margin mining inside each document pair."),
                        ("mine-global", "Margin mining across all documents at once.")):
        p = add(name, help_)
        p.add_argument("--pairs", required=name == "mine-local", default=None)
        _embedding_inputs(p)
        p.add_argument("--blacklist", default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--k", type=int, default=4)
        p.add_argument("--min-score", type=float, default=None)
        p.add_argument("--max-count", type=int, default=None, help="only use overlaps of at most this many segments")

    p = add("postprocess", "Filter, concatenate, rescore and deduplicate alignments.")
    p.add_argument("--alignments", required=True)
    p.add_argument("--src-segments", required=True)
    p.add_argument("--tgt-segments", required=True)
    _embedding_inputs(p)
    p.add_argument("--audio-dir", default=None, help="enables the identical-content pass")
    p.add_argument("--out", required=True)
    p.add_argument("--stages", default=None, help="stage accounting TSV (default <out>.stages.tsv)")
    p.add_argument("--cost-keep", type=float, default=0.8)
    p.add_argument("--max-concat", type=int, default=3)
    p.add_argument("--max-concat-dur", type=float, default=20.0)
    p.add_argument("--max-overlap", type=float, default=0.8)
    p.add_argument("--min-dur", type=float, default=1.0)
    p.add_argument("--min-final-dur", type=float, default=2.0)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--hours", type=float, default=None)
    p.add_argument("--no-concat", action="store_true", help="skip concatenation (required for mined input)")
    p.add_argument("--dur-thresh", type=float, default=0.1)
    p.add_argument("--sim-thresh", type=float, default=5.0)
    _fbank_options(p)

    p = add("score", "Strict and/or lax precision and recall against a reference.")
    p.add_argument("--reference", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--mode", default="both", choices=["strict", "lax", "both"])
    p.add_argument("--src-segments", default=None, help="with --tgt-segments: lax overlap by time")
    p.add_argument("--tgt-segments", default=None)
    p.add_argument("--out", default=None, help="default: standard output")

    p = add("stats", "Out-of-pair, out-of-order and duration statistics.")
    p.add_argument("--alignments", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--src-segments", required=True)
    p.add_argument("--tgt-segments", default=None, help="declares target documents outside the pairs manifest")
    p.add_argument("--buckets", type=_floats, default=_floats(DEFAULT_BUCKETS))
    p.add_argument("--out", default=None)

    d = SynthConfig()
    p = add("synth", "Generate a synthetic corpus with gold alignments.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-pairs", type=int, default=d.n_pairs)
    p.add_argument("--segs-per-doc", type=_int_range, default=d.segs_per_doc, help="N or LO,HI")
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--noise-sigma", type=float, default=d.noise_sigma)
    p.add_argument("--target-cosine", type=float, default=None, help="derive --noise-sigma from a mean true-pair cosine")
    p.add_argument("--block-mix", type=_floats, default=list(d.block_mix), help="probabilities of " + ",".join(BLOCK_KINDS))
    p.add_argument("--identical-rate", type=float, default=d.identical_rate)
    p.add_argument("--cross-dup-rate", type=float, default=d.cross_dup_rate)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--with-audio", action="store_true")
    p.add_argument("--max-count", type=int, default=OverlapConfig().max_count)
    p.add_argument("--max-duration", type=float, default=OverlapConfig().max_duration)

    return parser, subs


def _load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _parse(argv: list[str]) -> argparse.Namespace:
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    if known.config and command in subs:
        cfg = _load_config(known.config)
        sp = subs[command]
        dests = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - dests - {"config"})
        if unknown:
            raise UsageError(f"{known.config}: unknown options for {command}: {', '.join(unknown)}")
        for a in sp._actions:
            if a.dest in cfg:
                a.required = False
        sp.set_defaults(**cfg)
    return parser.parse_args(argv)


# --------------------------------------------------------------------------
# commands


def cmd_fbank(args) -> None:
    cfg = _fbank_config(args)
    x, rate = read_wav(args.wav)
    if rate != cfg.sample_rate:
        raise DataError(f"{args.wav}: expected {cfg.sample_rate} Hz, got {rate} Hz")
    if args.start is not None or args.end is not None:
        x = cut(x, args.start or 0.0, args.end if args.end is not None else len(x) / rate, rate)
    fb = compute_fbank(x, cfg)
    with open(args.out, "wb") as f:
        np.save(f, fb.astype(np.float32))
    logger.info("wrote %s: %d bins x %d frames", args.out, *fb.shape)


def cmd_detect(args) -> None:
    pairs = read_pairs(args.pairs)
    src_segs, tgt_segs = read_segments(args.src_segments), read_segments(args.tgt_segments)
    store = AudioStore(args.audio_dir, fbank_config=_fbank_config(args))
    dets = detect_pairs(pairs, src_segs, tgt_segs, store, args.dur_thresh, args.sim_thresh, args.threads)
    write_detections(args.out, dets)
    logger.info("wrote %d identical pairs to %s", len(dets), args.out)


def cmd_overlaps(args) -> None:
    cfg = OverlapConfig(args.max_count, args.max_duration)
    segs = read_segments(args.segments)
    keys = [o for doc in sorted(segs) for o in build_overlaps(segs[doc], cfg)]
    write_sidecar(args.out, keys)
    logger.info("wrote %d overlaps for %d documents to %s", len(keys), len(segs), args.out)


def cmd_align(args) -> None:
    params = AlignParams(
        sample_size=args.sample_size, window_radius=args.window, base_case_size=args.base_size,
        deletion_percentile=args.del_percentile, max_block=args.max_block, seed=args.seed,
    )
    pairs = read_pairs(args.pairs)
    src, tgt = _apply_blacklist(args, _load_matrix(args.src_emb, args.src_sidecar), _load_matrix(args.tgt_emb, args.tgt_sidecar))
    out = align_pairs(pairs, src, tgt, params, threads=args.threads)
    write_alignments(args.out, out)
    _write_meta(Path(args.out), command="align", seed=args.seed, params=asdict(params),
                approximations=["cost normalizer from random samples"])
    logger.info("wrote %d alignment records to %s", len(out), args.out)


def cmd_mine(args) -> None:
    src = _load_matrix(args.src_emb, args.src_sidecar, args.max_count)
    tgt = _load_matrix(args.tgt_emb, args.tgt_sidecar, args.max_count)
    src, tgt = _apply_blacklist(args, src, tgt)
    pairs = read_pairs(args.pairs) if args.pairs else None
    if args.command == "mine-local":
        out = local_mine(pairs, src, tgt, args.k, args.threads)
    else:
        src_docs = sorted({p.src_doc_id for p in pairs}) if pairs else None
        tgt_docs = sorted({p.tgt_doc_id for p in pairs}) if pairs else None
        out = global_mine(src, tgt, args.k, src_docs, tgt_docs)
    if args.min_score is not None:
        out = [a for a in out if a.margin >= args.min_score]
    write_alignments(args.out, out)
    _write_meta(Path(args.out), command=args.command, k=args.k, min_score=args.min_score,
                max_count=args.max_count, approximations=[])
    logger.info("wrote %d mined alignments to %s", len(out), args.out)


def cmd_postprocess(args) -> None:
    cfg = PostConfig(
        cost_keep_fraction=args.cost_keep, max_concat_count=args.max_concat,
        max_concat_duration=args.max_concat_dur, max_overlap=args.max_overlap,
        min_align_duration=args.min_dur, min_final_duration=args.min_final_dur, k=args.k,
        dur_thresh=args.dur_thresh, sim_thresh=args.sim_thresh,
    )
    src_segs, tgt_segs = read_segments(args.src_segments), read_segments(args.tgt_segments)
    src = _load_matrix(args.src_emb, args.src_sidecar)
    tgt = _load_matrix(args.tgt_emb, args.tgt_sidecar)
    fbank = None
    if args.audio_dir:
        store = AudioStore(args.audio_dir, fbank_config=_fbank_config(args))
        segs = {"src": src_segs, "tgt": tgt_segs}

        def fbank(side, span):
            return store.span_fbank(segs[side], span)
    res = run_postprocess(read_alignments(args.alignments), src_segs, tgt_segs, src, tgt, cfg,
                          fbank=fbank, concatenate=not args.no_concat, hours=args.hours)
    write_alignments(args.out, res.alignments)
    stages = args.stages or str(args.out) + ".stages.tsv"
    with open(stages, "w", encoding="utf-8") as f:
        for s in res.stages:
            f.write(f"{s.stage}\t{s.n_in}\t{s.n_out}\n")
    approx = []
    if res.approximated:
        approx.append(f"weighted-mean embeddings for {res.approximated} concatenated spans")
    _write_meta(Path(args.out), command="postprocess", params=asdict(cfg), hours=args.hours,
                concatenate=not args.no_concat, identical_pass=fbank is not None, approximations=approx)
    logger.info("wrote %d alignments to %s", len(res.alignments), args.out)


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def cmd_score(args) -> None:
    ref, sys_ = read_alignments(args.reference), read_alignments(args.system)
    segments = None
    if args.src_segments or args.tgt_segments:
        if not (args.src_segments and args.tgt_segments):
            raise UsageError("--src-segments and --tgt-segments go together")
        segments = (read_segments(args.src_segments), read_segments(args.tgt_segments))
    modes = ["strict", "lax"] if args.mode == "both" else [args.mode]
    f = _open_out(args.out)
    try:
        f.write("mode\tprecision\trecall\tf1\ttp_system\tn_system\ttp_reference\tn_reference\n")
        for m in modes:
            r = score_pr(sys_, ref, m, segments)
            f.write(f"{m}\t{r.precision:.6f}\t{r.recall:.6f}\t{r.f1:.6f}\t"
                    f"{r.tp_system}\t{r.n_system}\t{r.tp_reference}\t{r.n_reference}\n")
    finally:
        if f is not sys.stdout:
            f.close()
    if args.out:
        # a lax hit is counted once per alignment however many counterparts it overlaps
        _write_meta(Path(args.out), command="score", lax_accounting="per-alignment",
                    lax_overlap="time" if segments else "index", deletions="ignored")


def cmd_stats(args) -> None:
    al = read_alignments(args.alignments)
    pairs = read_pairs(args.pairs)
    segs = read_segments(args.src_segments)
    tgt_docs = read_segments(args.tgt_segments).keys() if args.tgt_segments else ()
    o = order_stats(al, pairs, (segs.keys(), tgt_docs))
    d = duration_stats(al, segs, args.buckets)
    f = _open_out(args.out)
    try:
        f.write(f"total\t{o.total}\n")
        f.write(f"out_of_pair\t{o.out_of_pair}\t{o.out_of_pair_fraction:.6f}\n")
        f.write(f"out_of_order\t{o.out_of_order}\t{o.out_of_order_fraction:.6f}\n")
        for label, c, fr in zip(d.labels(), d.counts, d.fractions):
            f.write(f"duration {label}\t{c}\t{fr:.6f}\n")
        f.write(f"mean_duration\t{'NA' if d.mean is None else f'{d.mean:.6f}'}\n")
    finally:
        if f is not sys.stdout:
            f.close()


def cmd_synth(args) -> None:
    sigma = args.noise_sigma if args.target_cosine is None else sigma_for_cosine(args.target_cosine, args.dim)
    cfg = SynthConfig(
        n_pairs=args.n_pairs, segs_per_doc=tuple(args.segs_per_doc), dim=args.dim, noise_sigma=sigma,
        block_mix=tuple(args.block_mix), identical_rate=args.identical_rate, cross_dup_rate=args.cross_dup_rate,
        seed=args.seed, with_audio=args.with_audio, overlaps=OverlapConfig(args.max_count, args.max_duration),
    )
    c = generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_segments(out / "src.segments.tsv", c.src_segments)
    write_segments(out / "tgt.segments.tsv", c.tgt_segments)
    write_pairs(out / "pairs.tsv", c.pairs)
    write_embeddings(out / "src.emb", c.src_embeddings)
    write_embeddings(out / "tgt.emb", c.tgt_embeddings)
    write_alignments(out / "gold.tsv", c.gold)
    with open(out / "identical.tsv", "w", encoding="utf-8") as f:
        for p in c.identical:
            f.write(f"{p.src_doc}\t{p.src_index}\t{p.tgt_doc}\t{p.tgt_index}\t{p.lead_pad!r}\t{p.trail_pad!r}\n")
    with open(out / "cross_dups.tsv", "w", encoding="utf-8") as f:
        for d in c.cross_dups:
            f.write(f"{d.src_doc}\t{d.src_index}\t{d.tgt_doc}\t{d.tgt_index}\n")
    if c.audio is not None:
        (out / "audio").mkdir(exist_ok=True)
        for doc in sorted(c.audio):
            write_wav(out / "audio" / f"{doc}.wav", c.audio[doc], cfg.sample_rate)
    meta = {"command": "synth", "seed": cfg.seed, "config": asdict(cfg), "mean_true_cosine": c.mean_true_cosine}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %d pairs to %s (mean true cosine %.4f)", len(c.pairs), out, c.mean_true_cosine)


COMMANDS = {
    "fbank": cmd_fbank,
    "detect-identical": cmd_detect,
    "overlaps": cmd_overlaps,
    "align": cmd_align,
    "mine-local": cmd_mine,
    "mine-global": cmd_mine,
    "postprocess": cmd_postprocess,
    "score": cmd_score,
    "stats": cmd_stats,
    "synth": cmd_synth,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse: --help gives 0, errors give 2
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"svalign: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"svalign: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(stream=sys.stderr, level=args.log_level, force=True,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.threads = resolve_threads(args.threads)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"svalign {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # parameter out of range
        print(f"svalign {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"svalign {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
