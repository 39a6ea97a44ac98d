"""Command-line entry point: ``imgcot <subcommand> [options]``.

Exit codes: 0 success, 1 contract or configuration error, 2 numeric
failure, 3 external-service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from imgcot import __version__, pipeline
from imgcot.config import load_config
from imgcot.errors import ImgCoTError

log = logging.getLogger("imgcot")

DESCRIPTION = """\
Visual chain-of-thought pipeline. Stages, in order:
  generate-task    write the bundled chain-lookup task (items.jsonl + text corpus)
  render           render every trace to PGM pages (or one --text)
  train-tokenizer  train the page tokenizer on the training split's pages
  encode-corpus    encode all pages to latent codes (latents.jsonl)
  build-dataset    join task records with their latent codes (dataset.jsonl)
  train-scorer     train the local confidence scorer (character LM) on the corpus
  compute-gamma    estimate the confidence threshold from a text corpus
  filter-corpus    prune confident steps from each trace (dataset.filtered.jsonl)
  train-reasoner   train the reasoner (mode imgcot or limgcot)
  infer            answer one --question, or evaluate a whole --split
  report           token accounting, loss curves and the latent-count sweep
  run-all          every stage, both modes, then the report

Settings come from --config (TOML), then environment variables
IMGCOT__SECTION__KEY, then --set SECTION.KEY=VALUE and explicit flags. All artifacts go under work_dir;
each invocation writes manifests/<stage>.json with the config digest, seed
and input/output digests.
"""


def _parse_set(values) -> dict:
    from imgcot.config import _parse_env_value

    out = {}
    for item in values or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = _parse_env_value(raw.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one setting (repeatable), e.g. --set tokenizer.n_latent=4")
    common.add_argument("--work-dir", help="artifact directory (overrides work_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides seed)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="imgcot", description=DESCRIPTION,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"imgcot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    add("generate-task", "write the synthetic chain-lookup task and its text corpus")
    p = add("render", "render traces to PGM pages with layout sidecars")
    p.add_argument("--items", help="records to render (default: work_dir/task/items.jsonl)")
    p.add_argument("--text", help="render this one text instead (use \\n between steps)")
    p.add_argument("--out", help="output directory for --text (default: work_dir/single)")
    p.add_argument("--height", type=int, help="page height in pixels")
    p.add_argument("--width", type=int, help="page width in pixels")
    p.add_argument("--min-font", type=int, help="smallest glyph scale")
    p.add_argument("--max-font", type=int, help="largest glyph scale")
    p.add_argument("--delimiter", action="append", help="step delimiter (repeatable; default newline)")
    add("train-tokenizer", "train the page tokenizer")
    add("encode-corpus", "encode rendered pages to latent codes")
    add("build-dataset", "join task records with latent codes")
    p = add("train-scorer", "train the local confidence scorer on the text corpus")
    p.add_argument("--corpus", help="directory of .txt files (default: work_dir/task/corpus)")
    p = add("compute-gamma", "estimate the confidence threshold gamma")
    p.add_argument("--corpus", help="directory of .txt files (default: work_dir/task/corpus)")
    p.add_argument("--aggregation", choices=("mean", "sum"), help="how token scores are combined")
    _scorer_args(p)
    p = add("filter-corpus", "prune confident reasoning steps")
    p.add_argument("--gamma-file", help="gamma record (default: work_dir/gamma.json)")
    _scorer_args(p)
    p = add("train-reasoner", "train the reasoner")
    p.add_argument("--mode", choices=("imgcot", "limgcot"), help="training target")
    p = add("infer", "answer a question or evaluate a split")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--question", help="question text, e.g. 's:PQP?'")
    group.add_argument("--split", choices=("train", "test"), help="evaluate every record of this split")
    p.add_argument("--limit", type=int, help="evaluate at most this many records")
    p = add("report", "write report.md and report.json")
    p.add_argument("--sweep", action="store_true", help="(re)run the latent-count sweep first")
    p = add("run-all", "run every stage end to end")
    p.add_argument("--no-sweep", action="store_true", help="skip the latent-count sweep")
    return parser


def _scorer_args(p) -> None:
    p.add_argument("--scorer", choices=("local", "remote"), help="scoring backend")
    p.add_argument("--checkpoint", help="local scorer checkpoint (default: work_dir/scorer.ckpt)")
    p.add_argument("--endpoint", help="remote completion endpoint base URL")
    p.add_argument("--model", help="remote model name")


def _overrides(args) -> dict:
    out = _parse_set(args.set)
    if args.work_dir:
        out["work_dir"] = args.work_dir
    if args.seed is not None:
        out["seed"] = args.seed
    mapping = {
        "height": "render.height", "width": "render.width", "min_font": "render.min_font_size",
        "max_font": "render.max_font_size", "aggregation": "filter.aggregation", "gamma_file": "filter.gamma_file",
        "corpus": "filter.corpus_dir", "scorer": "scorer.backend", "checkpoint": "scorer.checkpoint",
        "endpoint": "scorer.base_url", "model": "scorer.model", "mode": "reasoner.mode",
    }
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    if getattr(args, "delimiter", None):
        out["render.delimiters"] = [d.encode().decode("unicode_escape") for d in args.delimiter]
    return out


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def run(args) -> None:
    cfg = load_config(args.config, overrides=_overrides(args))
    ws = pipeline.workspace(cfg)
    cmd = args.command
    if cmd == "generate-task":
        records = pipeline.generate_task(cfg)
        print(f"wrote {len(records)} records to {ws.items}")
    elif cmd == "render":
        if args.text is not None:
            text = args.text.encode().decode("unicode_escape")
            paths = pipeline.render_single(cfg, text, args.out or ws.root / "single")
            for path in paths:
                print(path)
        else:
            index = pipeline.render_corpus(cfg, args.items)
            print(f"rendered {sum(len(r['pages']) for r in index)} pages for {len(index)} records")
    elif cmd == "train-tokenizer":
        _, reports = pipeline.train_tokenizer_stage(cfg)
        print(f"reconstruction loss {reports[0].rec:.5f} -> {reports[-1].rec:.5f}; saved {ws.tokenizer}")
    elif cmd == "encode-corpus":
        records = pipeline.encode_corpus(cfg)
        print(f"encoded {len(records)} records to {ws.latents}")
    elif cmd == "build-dataset":
        records = pipeline.build_dataset(cfg)
        print(f"wrote {len(records)} records to {ws.dataset}")
    elif cmd == "train-scorer":
        _, curve = pipeline.train_scorer_stage(cfg)
        print(f"final mean loss {curve[-1]:.6f}; saved {ws.scorer}")
    elif cmd == "compute-gamma":
        _print_json(pipeline.compute_gamma(cfg).to_dict())
    elif cmd == "filter-corpus":
        records = pipeline.filter_corpus(cfg)
        dropped = sum(len(r["step_means"]) - len(r["kept_steps"]) for r in records)
        print(f"filtered {dropped} steps across {len(records)} records into {ws.filtered}")
    elif cmd == "train-reasoner":
        _, result = pipeline.train_reasoner_stage(cfg)
        print(f"final mean loss {result.curve[-1]:.6f}; saved {ws.reasoner(cfg.reasoner.mode)}")
    elif cmd == "infer":
        if args.question is not None:
            res = pipeline.infer_question(cfg, args.question)
            print(pipeline.extract_answer(res.text, cfg.reasoner.mode))
            print(f"tokens: latent={res.latent_tokens} text={res.text_tokens}")
        else:
            _print_json(pipeline.evaluate_split(cfg, args.split, args.limit))
    elif cmd == "report":
        if args.sweep:
            pipeline.latent_sweep(cfg)
        _, md = pipeline.build_report(cfg)
        print(md, end="")
    elif cmd == "run-all":
        run_all(cfg, sweep=not args.no_sweep)
    else:  # argparse rejects unknown subcommands before this point
        raise AssertionError(cmd)


def run_all(cfg, sweep: bool = True) -> dict:
    """Every stage end to end; returns the held-out metrics per mode."""
    img = replace(cfg, reasoner=replace(cfg.reasoner, mode="imgcot"))
    lim = replace(cfg, reasoner=replace(cfg.reasoner, mode="limgcot"))
    pipeline.generate_task(img)
    pipeline.render_corpus(img)
    pipeline.train_tokenizer_stage(img)
    pipeline.encode_corpus(img)
    pipeline.build_dataset(img)
    metrics = {}
    pipeline.train_reasoner_stage(img)
    metrics["imgcot"] = pipeline.evaluate_split(img, "test")
    pipeline.train_scorer_stage(img)
    pipeline.compute_gamma(img)
    pipeline.filter_corpus(img)
    pipeline.train_reasoner_stage(lim)
    metrics["limgcot"] = pipeline.evaluate_split(lim, "test")
    if sweep:
        pipeline.latent_sweep(img)
    _, md = pipeline.build_report(img)
    print(md, end="")
    return metrics


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ImgCoTError as exc:
        problems = getattr(exc, "problems", None)
        if problems:
            print("error: invalid configuration:", file=sys.stderr)
            for problem in problems:
                print(f"  - {problem}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
