"""Command-line entry point: ``mlc-asr-kit <subcommand> ...``.

Results go to stdout (or ``--out``), diagnostics to stderr. Exit codes:
0 success, 1 input/validation error, 2 format/corruption error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from mlc_asr_kit import ckpt, corpus, decode, metrics
from mlc_asr_kit.augment import AugmentPolicy, apply_policy
from mlc_asr_kit.errors import InputError, KitError
from mlc_asr_kit.textnorm import Language, LanguageTable, Transcript, load_language_table

log = logging.getLogger("mlc_asr_kit")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def read_utterance_file(path: str) -> dict[str, tuple[Language, str]]:
    """Parse ``utterance_id<TAB>language<TAB>text`` lines."""
    rows: dict[str, tuple[Language, str]] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 ({exc.reason} at byte {exc.start})") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t", 2)
        if len(parts) < 2:
            raise InputError(f"{path}:{lineno}: expected utterance_id<TAB>language<TAB>text")
        uid, lang = parts[0], parts[1]
        if uid in rows:
            raise InputError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        try:
            rows[uid] = (Language.parse(lang), parts[2] if len(parts) == 3 else "")
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return rows


def _score_pairs(
    refs: dict[str, tuple[Language, str]], hyps: dict[str, tuple[Language, str]], table: LanguageTable, jobs: int
) -> list[metrics.UtteranceScore]:
    missing_hyp = sorted(set(refs) - set(hyps))
    missing_ref = sorted(set(hyps) - set(refs))
    if missing_hyp or missing_ref:
        lines = [f"  no hypothesis: {u}" for u in missing_hyp] + [f"  no reference: {u}" for u in missing_ref]
        raise InputError("reference and hypothesis utterance ids differ:\n" + "\n".join(lines))

    def one(uid: str) -> metrics.UtteranceScore:
        (rlang, rtext), (hlang, htext) = refs[uid], hyps[uid]
        return metrics.score_utterance(
            Transcript.from_text(rtext, rlang, table), Transcript.from_text(htext, hlang, table), uid
        )

    uids = sorted(refs)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, uids))
    return [one(u) for u in uids]


def cmd_score(args: argparse.Namespace) -> int:
    table = load_language_table(args.lang_config)
    scores = _score_pairs(read_utterance_file(args.ref), read_utterance_file(args.hyp), table, args.jobs)
    report = metrics.aggregate(scores)
    _emit(report.to_tsv(args.column) if args.format == "tsv" else report.to_json(), args.out)
    if args.plot:
        from mlc_asr_kit.plotting import plot_score_report

        plot_score_report(report, args.plot, title=args.column)
    return 0


def cmd_detect_halluc(args: argparse.Namespace) -> int:
    table = load_language_table(args.lang_config)
    hyps = read_utterance_file(args.hyp)
    lines = []
    for uid in sorted(hyps):
        lang, text = hyps[uid]
        tokens = Transcript.from_text(text, lang, table).tokens
        for flag in metrics.detect_hallucination(tokens, args.nmin, args.nmax, args.min_repeats, uid):
            lines.append(flag.to_line() + "\n")
    _emit("".join(lines), args.out)
    return 0


def cmd_decode_sim(args: argparse.Namespace) -> int:
    scorer = decode.TableScorer.from_file(args.scorer)
    cfg = decode.DecodeConfig(
        beam_width=args.beam,
        no_repeat_ngram=args.no_repeat_ngram,
        max_len=args.max_len,
        length_penalty=args.length_penalty,
        eos_id=scorer.eos_id if args.eos is None else args.eos,
    )
    contexts = []
    for lineno, line in enumerate(Path(args.contexts).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(f"{args.contexts}:{lineno}: expected utterance_id<TAB>context")
        contexts.append((parts[0], parts[1]))
    out = []
    for uid, context in sorted(contexts):
        tokens, logprob = decode.beam_search(context, scorer, cfg)
        out.append(f"{uid}\t{logprob!r}\t{' '.join(map(str, tokens))}\n")
    _emit("".join(out), args.out)
    return 0


def cmd_avg(args: argparse.Namespace) -> int:
    if bool(args.files) == bool(args.run_log):
        raise InputError("give either checkpoint FILEs or --run-log, not both or neither")
    underfull = False
    if args.run_log:
        selection = ckpt.select_last_k(ckpt.load_run_log(args.run_log), args.last)
        paths = [m.path for m in selection.checkpoints]
        steps = [m.step for m in selection.checkpoints]
        underfull = selection.underfull
        if underfull:
            print(f"warning: only {len(paths)} checkpoints in run log, --last {args.last}", file=sys.stderr)
    else:
        paths, steps = list(args.files), None
    ckpt.average_files(paths, args.out)
    summary = {"out": args.out, "inputs": paths, "steps": steps, "underfull": underfull}
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_select_ckpt(args: argparse.Namespace) -> int:
    result = ckpt.replay_early_stop(ckpt.load_run_log(args.run_log), args.tolerance, strict=not args.non_strict)
    doc = {
        "stop_step": result.stop_step,
        "best_step": result.best.step,
        "best_val_acc": result.best.val_acc,
        "best_path": result.best.path,
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    if args.policy:
        policy = AugmentPolicy.from_file(args.policy, seed=args.seed)
    else:
        policy = AugmentPolicy(seed=args.seed if args.seed is not None else 0)
    result = apply_policy(corpus.load_manifest(args.manifest), policy, args.out_dir)
    for uid, message in result.errors:
        print(f"error: {uid}: {message}", file=sys.stderr)
    _emit(corpus.dumps_manifest(result.entries), args.out)
    return 0


def cmd_manifest_merge(args: argparse.Namespace) -> int:
    merged = corpus.merge([corpus.load_manifest(p) for p in args.manifests], dedup=args.dedup)
    _emit(corpus.dumps_manifest(merged), args.out)
    return 0


def cmd_manifest_report(args: argparse.Namespace) -> int:
    entries = [e for p in args.manifests for e in corpus.load_manifest(p)]
    report = corpus.duration_report(entries)
    _emit(report.to_tsv() if args.format == "tsv" else report.to_json(), args.out)
    if args.plot:
        from mlc_asr_kit.plotting import plot_duration_report

        plot_duration_report(report, args.plot)
    return 0


def cmd_prompt(args: argparse.Namespace) -> int:
    registry = decode.load_prompt_registry(args.registry)
    text = decode.get_prompt(Language.parse(args.lang), registry)
    if text.startswith("<PLACEHOLDER"):
        print(f"warning: built-in prompt for {args.lang} is a placeholder", file=sys.stderr)
    sys.stdout.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlc-asr-kit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, func: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func)
        return p

    p = add("score", cmd_score, "WER/CER per language plus pooled and macro MER")
    p.add_argument("--ref", required=True, help="reference file: id<TAB>language<TAB>text")
    p.add_argument("--hyp", required=True, help="hypothesis file, same layout")
    p.add_argument("--lang-config", help="language config JSON (default: $MLC_ASR_KIT_LANG_CONFIG)")
    p.add_argument("--format", choices=("tsv", "doc"), default="tsv")
    p.add_argument("--column", default="System", help="header for the rate column in TSV output")
    p.add_argument("--out")
    p.add_argument("--plot", help="also write a bar chart (format from extension)")
    p.add_argument("--jobs", type=int, default=1)

    p = add("detect-halluc", cmd_detect_halluc, "flag n-grams repeated back to back")
    p.add_argument("--hyp", required=True)
    p.add_argument("--nmin", type=int, default=1)
    p.add_argument("--nmax", type=int, default=5)
    p.add_argument("--min-repeats", type=int, default=10)
    p.add_argument("--lang-config")
    p.add_argument("--out")

    p = add("decode-sim", cmd_decode_sim, "beam search over a table-driven toy scorer")
    p.add_argument("--scorer", required=True, help="scorer JSON")
    p.add_argument("--contexts", required=True, help="id<TAB>context lines")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--no-repeat-ngram", type=int, default=5, help="0 disables the ban")
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--length-penalty", type=float, default=0.0)
    p.add_argument("--eos", type=int, help="override the scorer file's eos_id")
    p.add_argument("--out")

    p = add("avg", cmd_avg, "equal-weight average of checkpoint files")
    p.add_argument("files", nargs="*", metavar="FILE")
    p.add_argument("--run-log", help="step<TAB>val_acc<TAB>path lines")
    p.add_argument("--last", type=int, default=15)
    p.add_argument("--out", required=True)

    p = add("select-ckpt", cmd_select_ckpt, "replay early stopping over a run log")
    p.add_argument("--run-log", required=True)
    p.add_argument("--tolerance", type=int, default=2000)
    p.add_argument("--non-strict", action="store_true", help="count ties with the best as improvements")
    p.add_argument("--out")

    p = add("augment", cmd_augment, "speed and volume perturbation of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", help="policy JSON (default: speed 0.9/1.1, one volume copy in 0.15-1.15)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out", help="augmented manifest path (default: stdout)")

    p = add("manifest-merge", cmd_manifest_merge, "merge manifests with corpus-qualified ids")
    p.add_argument("manifests", nargs="+", metavar="MANIFEST")
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--out")

    p = add("manifest-report", cmd_manifest_report, "hours per corpus and language")
    p.add_argument("manifests", nargs="+", metavar="MANIFEST")
    p.add_argument("--format", choices=("tsv", "doc"), default="tsv")
    p.add_argument("--out")
    p.add_argument("--plot", help="also write a stacked bar chart")

    p = add("prompt", cmd_prompt, "print the language-specific prompt")
    p.add_argument("--lang", required=True)
    p.add_argument("--registry")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except KitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
