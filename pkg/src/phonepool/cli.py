"""Command-line driver for every pipeline stage.

Configuration precedence: command-line flags > --config JSON file > built-in
defaults.  Exit codes: 0 success, 1 validation error (including bad flags),
2 I/O error.
"""

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from . import alignment as ali_mod
from . import corpusio, features, pooling, textproc
from .errors import ConfigError, PhonepoolError, ValidationError
from .experiment import (CompareConfig, ToyCorpus, ToyCorpusConfig,
                         ToyUtterance, format_compare_report,
                         generate_toy_corpus, run_compare)
from .nnet import (DecoderConfig, EncoderConfig, TrainConfig, beam_search,
                   load_checkpoint, save_checkpoint, train)
from .nnet.gradcheck import standard_gradcheck_battery
from .nnet.model import vocab_fingerprint


def _load_config_section(path: Optional[str], section: str) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    value = cfg.get(section, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    return value


def _merged(cls, file_section: dict, flag_values: dict):
    """Build a config dataclass honoring flags > file > defaults."""
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(file_section) - valid
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys in config file: {sorted(unknown)}")
    kwargs = dict(file_section)
    kwargs.update({k: v for k, v in flag_values.items() if v is not None})
    return cls(**kwargs)


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _write_report(stats: dict, report_path: Optional[str],
                  json_path: Optional[str]) -> str:
    text = "\n".join(f"{k}={v}" for k, v in stats.items())
    if report_path:
        with open(report_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
    if json_path:
        with open(json_path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(stats, f, indent=2, sort_keys=True)
            f.write("\n")
    return text


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _fbank_one(job: tuple[corpusio.ManifestRecord, features.FrontendConfig]
               ) -> corpusio.ArchiveEntry:
    record, cfg = job
    wave = features.read_wav(record.audio_path, record.utterance_id,
                             record.speaker_id)
    feats = features.compute_log_mel(wave, cfg)
    return corpusio.ArchiveEntry(feats.utterance_id, feats.data)


def cmd_fbank(args) -> int:
    section = _load_config_section(args.config, "frontend")
    cfg = _merged(features.FrontendConfig, section, {
        "window_ms": args.window_ms, "shift_ms": args.shift_ms,
        "num_mel_bins": args.num_mel_bins, "preemphasis": args.preemphasis,
        "dither": args.dither, "fft_size": args.fft_size,
    })
    cfg.validate()
    records = corpusio.read_manifest(args.manifest)
    entries = _parallel_map(_fbank_one, [(r, cfg) for r in records], args.jobs)
    corpusio.write_archive(args.out, entries)
    print(f"wrote {len(entries)} feature matrices to {args.out}")
    return 0


def cmd_cmvn(args) -> int:
    records = {r.utterance_id: r for r in corpusio.read_manifest(args.manifest)}
    feats = []
    for entry in corpusio.read_archive(args.feats):
        if entry.utterance_id not in records:
            raise ValidationError(
                f"utterance '{entry.utterance_id}' missing from manifest")
        feats.append(features.FeatureMatrix(
            entry.utterance_id, records[entry.utterance_id].speaker_id,
            entry.matrix.astype(np.float64)))
    normalized = features.apply_speaker_cmvn(feats, var_floor=args.var_floor)
    corpusio.write_archive(args.out, [
        corpusio.ArchiveEntry(fm.utterance_id, fm.data) for fm in normalized])
    print(f"normalized {len(normalized)} utterances "
          f"({len(set(f.speaker_id for f in normalized))} speakers)")
    return 0


def cmd_ali_expand(args) -> int:
    inv = ali_mod.read_inventory(args.inventory)
    num_frames = {e.utterance_id: e.matrix.shape[0]
                  for e in corpusio.read_archive(args.feats)}
    out = []
    with open(args.spliced, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = ali_mod.parse_frame_alignment(line, inv)
            if rec.utterance_id not in num_frames:
                raise ValidationError(
                    f"utterance '{rec.utterance_id}' missing from feature archive")
            spliced = ali_mod.SplicedLabelSequence(rec.utterance_id, rec.labels)
            out.append(ali_mod.expand_ctc_labels(spliced,
                                                 num_frames[rec.utterance_id]))
    ali_mod.write_alignment_file(args.out, out, inv)
    print(f"expanded {len(out)} alignments to {args.out}")
    return 0


def _load_pairs(feats_path, ali_path, inv):
    alis = {a.utterance_id: a for a in ali_mod.read_alignment_file(ali_path, inv)}
    pairs = []
    for entry in corpusio.read_archive(feats_path):
        if entry.utterance_id not in alis:
            raise ValidationError(f"no alignment for utterance '{entry.utterance_id}'")
        fm = features.FeatureMatrix(entry.utterance_id, "",
                                    entry.matrix.astype(np.float64))
        pairs.append(ali_mod.validate_pair(fm, alis[entry.utterance_id]))
    if not pairs:
        raise ValidationError("empty feature archive")
    return pairs


def _silence_indices(inv, spec_str: Optional[str]):
    if not spec_str:
        return []
    return [inv.index(s) for s in spec_str.split(",") if s]


def cmd_pool(args) -> int:
    inv = ali_mod.read_inventory(args.inventory)
    pairs = _load_pairs(args.feats, args.ali, inv)
    pooled = [pooling.pool_runs(fm, al, blank_index=inv.blank_index,
                                blank_mode=args.blank_mode)
              for fm, al in pairs]
    corpusio.write_archive(args.out_feats, [
        corpusio.ArchiveEntry(p.utterance_id, p.to_matrix()) for p in pooled])
    if args.out_segments:
        pooling.write_segments(args.out_segments, pooled, inv)
    stats = pooling.corpus_stats(pairs, _silence_indices(inv, args.silence_labels))
    print(_write_report(stats.as_dict(), args.report, args.report_json))
    return 0


def cmd_stride(args) -> int:
    out = []
    for entry in corpusio.read_archive(args.feats):
        fm = features.FeatureMatrix(entry.utterance_id, "",
                                    entry.matrix.astype(np.float64))
        out.append(corpusio.ArchiveEntry(
            entry.utterance_id, pooling.stride_downsample(fm, args.n).data))
    if not out:
        raise ValidationError("empty feature archive")
    corpusio.write_archive(args.out, out)
    print(f"strided {len(out)} utterances by {args.n}")
    return 0


def cmd_stats(args) -> int:
    inv = ali_mod.read_inventory(args.inventory)
    pairs = _load_pairs(args.feats, args.ali, inv)
    stats = pooling.corpus_stats(pairs, _silence_indices(inv, args.silence_labels))
    print(_write_report(stats.as_dict(), args.report, args.report_json))
    return 0


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [ln.rstrip("\n") for ln in f if ln.strip()]


def cmd_bpe_learn(args) -> int:
    lines = _read_lines(args.text)
    if args.normalize:
        lines = [textproc.normalize_target(ln) for ln in lines]
    table = textproc.bpe_learn(lines, args.merges)
    textproc.write_merge_table(args.out, table)
    print(f"learned {table.num_merges} merges from {len(lines)} lines")
    return 0


def cmd_bpe_apply(args) -> int:
    table = textproc.read_merge_table(args.merges)
    with open(args.out, "w", encoding="utf-8", newline="\n") as out:
        for line in _read_lines(args.text):
            if args.normalize:
                line = textproc.normalize_target(line)
            tokens = []
            for word in line.split():
                tokens.extend(textproc.bpe_apply(word, table))
            out.write(" ".join(tokens) + "\n")
    print(f"wrote subword text to {args.out}")
    return 0


def _read_keyed_text(path) -> dict[str, str]:
    out = {}
    for line in _read_lines(path):
        parts = line.split(maxsplit=1)
        if len(parts) != 2:
            raise ValidationError(f"bad text record (need 'utt-id text ...'): {line!r}")
        if parts[0] in out:
            raise ValidationError(f"duplicate utterance id '{parts[0]}' in text file")
        out[parts[0]] = parts[1]
    return out


def _load_parallel(feats_path, text_path, vocab):
    texts = _read_keyed_text(text_path)
    data = []
    for entry in corpusio.read_archive(feats_path):
        if entry.utterance_id not in texts:
            raise ValidationError(f"no transcript for utterance '{entry.utterance_id}'")
        text = textproc.normalize_target(texts[entry.utterance_id])
        data.append((entry.matrix.astype(np.float64),
                     textproc.tokenize(text, vocab)))
    if not data:
        raise ValidationError("empty feature archive")
    return data


def cmd_train(args) -> int:
    table = textproc.read_merge_table(args.merges) if args.merges else None
    if args.unit == "bpe" and table is None:
        raise ConfigError("--unit bpe requires --merges")
    train_texts = [textproc.normalize_target(t)
                   for t in _read_keyed_text(args.text).values()]
    vocab = textproc.build_vocab(train_texts, args.unit, table)

    tc = _merged(TrainConfig, _load_config_section(args.config, "train"), {
        "seed": args.seed, "num_epochs": args.epochs, "lr": args.lr,
        "avg_batch_size": args.avg_batch_size,
        "max_src_frames": args.max_src_frames,
    })
    reader = corpusio.read_archive(args.feats)
    first = next(reader, None)
    reader.close()
    if first is None:
        raise ValidationError("empty feature archive")
    enc_cfg = _merged(EncoderConfig, _load_config_section(args.config, "encoder"), {
        "input_dims": first.matrix.shape[1], "hidden": args.hidden,
        "downsample": (None if args.no_downsample is None else not args.no_downsample),
        "norm": args.norm,
    })
    dec_cfg = _merged(DecoderConfig, _load_config_section(args.config, "decoder"), {
        "vocab_size": len(vocab), "target_embed_dims": args.embed_dims,
        "attn_hidden": args.attn_hidden,
    })
    dec_cfg.vocab_size = len(vocab)

    train_set = _load_parallel(args.feats, args.text, vocab)
    dev_set = _load_parallel(args.dev_feats, args.dev_text, vocab)

    log_f = open(args.log, "w", encoding="utf-8", newline="\n") if args.log else None

    def on_epoch(rec):
        line = (f"epoch {rec.epoch}: loss={rec.train_loss:.4f} "
                f"dev_acc={rec.dev_metric:.4f} lr={rec.lr:.6f} "
                f"time={rec.wall_time_s:.1f}s")
        print(line, flush=True)
        if log_f:
            log_f.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")
            log_f.flush()

    try:
        result = train(train_set, dev_set, enc_cfg, dec_cfg, tc,
                       unk_id=vocab.unk_id, epoch_callback=on_epoch)
    finally:
        if log_f:
            log_f.close()
    if result.num_filtered:
        print(f"excluded {result.num_filtered} utterances longer than "
              f"{tc.max_src_frames} frames")
    save_checkpoint(args.out, result.model,
                    vocab_hash=vocab_fingerprint(vocab.id_to_token), seed=tc.seed)
    if args.vocab_out:
        textproc.write_vocab(args.vocab_out, vocab)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_decode(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    table = textproc.read_merge_table(args.merges) if args.merges else None
    vocab = textproc.read_vocab(args.vocab, args.unit, table)
    if meta.get("vocab_sha256") and \
            meta["vocab_sha256"] != vocab_fingerprint(vocab.id_to_token):
        raise ValidationError("vocabulary file does not match the checkpoint")
    n = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as out:
        for entry in corpusio.read_archive(args.feats):
            hyp = beam_search(model, entry.matrix.astype(np.float64),
                              beam=args.beam, len_norm_exp=args.len_norm,
                              bos_id=vocab.bos_id, eos_id=vocab.eos_id)
            text = textproc.detokenize(hyp.output(vocab.eos_id), vocab)
            out.write(f"{entry.utterance_id} {text}\n")
            n += 1
    print(f"decoded {n} utterances to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    failures = 0
    for res, tol in standard_gradcheck_battery(eps=args.eps):
        ok = res.ok and res.max_rel_err <= tol
        print(f"{'PASS' if ok else 'FAIL'} {res.name:26s} "
              f"max_rel_err={res.max_rel_err:.3e} tol={tol:g}")
        if res.nonfinite:
            print(f"     non-finite gradients: {', '.join(res.nonfinite)}")
        failures += 0 if ok else 1
    if failures:
        raise ValidationError(f"{failures} gradient check(s) failed")
    return 0


def _toy_paths(directory: str, split: str) -> dict[str, str]:
    return {
        "feats": os.path.join(directory, f"{split}.feats.ark"),
        "ali": os.path.join(directory, f"{split}.ali.txt"),
        "text": os.path.join(directory, f"{split}.text.txt"),
    }


def cmd_toygen(args) -> int:
    cfg = _merged(ToyCorpusConfig, _load_config_section(args.config, "corpus"), {
        "num_utterances": args.utterances, "num_symbols": args.symbols,
        "noise": args.noise, "seed": args.seed,
    })
    corpus = generate_toy_corpus(cfg)
    os.makedirs(args.out, exist_ok=True)
    ali_mod.write_inventory(os.path.join(args.out, "inventory.txt"),
                            corpus.inventory)
    for split, utts in (("train", corpus.train), ("dev", corpus.dev)):
        paths = _toy_paths(args.out, split)
        corpusio.write_archive(paths["feats"], [
            corpusio.ArchiveEntry(u.utterance_id, u.features) for u in utts])
        ali_mod.write_alignment_file(paths["ali"], [
            ali_mod.FrameAlignment(u.utterance_id, u.labels) for u in utts],
            corpus.inventory)
        with open(paths["text"], "w", encoding="utf-8", newline="\n") as f:
            for u in utts:
                f.write(f"{u.utterance_id} {u.text}\n")
    print(f"wrote toy corpus ({len(corpus.train)} train / {len(corpus.dev)} dev) "
          f"to {args.out}")
    return 0


def _load_toy_corpus(directory: str, cfg: ToyCorpusConfig) -> ToyCorpus:
    inv = ali_mod.read_inventory(os.path.join(directory, "inventory.txt"))
    splits = {}
    for split in ("train", "dev"):
        paths = _toy_paths(directory, split)
        texts = _read_keyed_text(paths["text"])
        alis = {a.utterance_id: a
                for a in ali_mod.read_alignment_file(paths["ali"], inv)}
        utts = []
        for entry in corpusio.read_archive(paths["feats"]):
            utt = entry.utterance_id
            if utt not in texts or utt not in alis:
                raise ValidationError(f"utterance '{utt}' missing text or alignment")
            utts.append(ToyUtterance(utt, entry.matrix.astype(np.float64),
                                     alis[utt].labels, texts[utt]))
        splits[split] = utts
    return ToyCorpus(cfg, splits["train"], splits["dev"], inv)


def cmd_compare(args) -> int:
    cc = _merged(CompareConfig, _load_config_section(args.config, "compare"), {
        "seed": args.seed, "num_epochs": args.epochs, "stride": args.stride,
        "threshold": args.threshold,
    })
    corpus = None
    if args.data:
        corpus = _load_toy_corpus(args.data, cc.corpus)
    report = run_compare(cc, corpus)
    text = format_compare_report(report)
    print(text)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
    if args.report_json:
        with open(args.report_json, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="phonepool",
        description="Phoneme-informed pooling of speech features: frontend, "
                    "alignments, pooling, tokenization, training, decoding, "
                    "and verification experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", help="JSON config file (flags override it)")
        return sp

    sp = add("fbank", cmd_fbank, "waveforms -> log-Mel feature archive")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--window-ms", type=float, dest="window_ms")
    sp.add_argument("--shift-ms", type=float, dest="shift_ms")
    sp.add_argument("--num-mel-bins", type=int, dest="num_mel_bins")
    sp.add_argument("--preemphasis", type=float)
    sp.add_argument("--dither", type=float)
    sp.add_argument("--fft-size", type=int, dest="fft_size")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("cmvn", cmd_cmvn, "per-speaker mean/variance normalization")
    sp.add_argument("--feats", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--var-floor", type=float, default=1e-10, dest="var_floor")

    sp = add("ali-expand", cmd_ali_expand, "expand spliced CTC labels to frames")
    sp.add_argument("--spliced", required=True)
    sp.add_argument("--feats", required=True)
    sp.add_argument("--inventory", required=True)
    sp.add_argument("--out", required=True)

    sp = add("pool", cmd_pool, "average frames over label runs")
    sp.add_argument("--feats", required=True)
    sp.add_argument("--ali", required=True)
    sp.add_argument("--inventory", required=True)
    sp.add_argument("--out-feats", required=True, dest="out_feats")
    sp.add_argument("--out-segments", dest="out_segments")
    sp.add_argument("--blank-mode", choices=("keep", "drop"), default="keep",
                    dest="blank_mode")
    sp.add_argument("--silence-labels", dest="silence_labels")
    sp.add_argument("--report")
    sp.add_argument("--report-json", dest="report_json")

    sp = add("stride", cmd_stride, "fixed-stride frame downsampling")
    sp.add_argument("--feats", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("stats", cmd_stats, "pooling statistics for a corpus")
    sp.add_argument("--feats", required=True)
    sp.add_argument("--ali", required=True)
    sp.add_argument("--inventory", required=True)
    sp.add_argument("--silence-labels", dest="silence_labels")
    sp.add_argument("--report")
    sp.add_argument("--report-json", dest="report_json")

    sp = add("bpe-learn", cmd_bpe_learn, "learn BPE merges from text")
    sp.add_argument("--text", required=True)
    sp.add_argument("--merges", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-normalize", dest="normalize", action="store_false")

    sp = add("bpe-apply", cmd_bpe_apply, "segment text with learned merges")
    sp.add_argument("--text", required=True)
    sp.add_argument("--merges", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-normalize", dest="normalize", action="store_false")

    sp = add("train", cmd_train, "train the seq2seq model")
    sp.add_argument("--feats", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--dev-feats", required=True, dest="dev_feats")
    sp.add_argument("--dev-text", required=True, dest="dev_text")
    sp.add_argument("--unit", choices=textproc.UNITS, default="words")
    sp.add_argument("--merges")
    sp.add_argument("--out", required=True)
    sp.add_argument("--vocab-out", dest="vocab_out")
    sp.add_argument("--log")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--avg-batch-size", type=int, dest="avg_batch_size")
    sp.add_argument("--max-src-frames", type=int, dest="max_src_frames")
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--embed-dims", type=int, dest="embed_dims")
    sp.add_argument("--attn-hidden", type=int, dest="attn_hidden")
    sp.add_argument("--no-downsample", dest="no_downsample",
                    action="store_const", const=True)
    sp.add_argument("--norm", choices=("batch", "layer"))

    sp = add("decode", cmd_decode, "beam-search decode a feature archive")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--feats", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--unit", choices=textproc.UNITS, default="words")
    sp.add_argument("--merges")
    sp.add_argument("--out", required=True)
    sp.add_argument("--beam", type=int, default=15)
    sp.add_argument("--len-norm", type=float, default=1.5, dest="len_norm")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient checks")
    sp.add_argument("--eps", type=float, default=1e-5)

    sp = add("toygen", cmd_toygen, "generate the synthetic toy corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--utterances", type=int)
    sp.add_argument("--symbols", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--seed", type=int)

    sp = add("compare", cmd_compare, "frames vs phonemes toy experiment")
    sp.add_argument("--data", help="toygen output directory (default: generate)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--report")
    sp.add_argument("--report-json", dest="report_json")

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.fn(args)
    except PhonepoolError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
