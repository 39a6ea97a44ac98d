"""Stage implementations behind the CLI.

Every stage reads its inputs from the work directory, writes its outputs
atomically, and records a manifest (config digest, seed, input and output
digests) under ``manifests/``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from imgcot import __version__
from imgcot.config import PipelineConfig
from imgcot.errors import ContractError, MissingInputError
from imgcot.io import atomic_write_text, file_digest, read_jsonl, require, write_jsonl

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def items(self) -> Path:
        return self.root / "task" / "items.jsonl"

    @property
    def corpus_dir(self) -> Path:
        return self.root / "task" / "corpus"

    @property
    def pages_dir(self) -> Path:
        return self.root / "pages"

    @property
    def pages_index(self) -> Path:
        return self.pages_dir / "index.jsonl"

    @property
    def tokenizer(self) -> Path:
        return self.root / "tokenizer.ckpt"

    @property
    def tokenizer_curve(self) -> Path:
        return self.root / "tokenizer_curve.json"

    @property
    def latents(self) -> Path:
        return self.root / "latents.jsonl"

    @property
    def dataset(self) -> Path:
        return self.root / "dataset.jsonl"

    @property
    def filtered(self) -> Path:
        return self.root / "dataset.filtered.jsonl"

    @property
    def gamma(self) -> Path:
        return self.root / "gamma.json"

    @property
    def scorer(self) -> Path:
        return self.root / "scorer.ckpt"

    @property
    def scorer_curve(self) -> Path:
        return self.root / "scorer_curve.json"

    def reasoner_dir(self, mode: str = "imgcot") -> Path:
        return self.root / ("reasoner" if mode == "imgcot" else f"reasoner-{mode}")

    def reasoner(self, mode: str = "imgcot") -> Path:
        return self.root / ("reasoner.ckpt" if mode == "imgcot" else f"reasoner-{mode}.ckpt")

    def reasoner_curve(self, mode: str = "imgcot") -> Path:
        return self.root / ("reasoner_curve.json" if mode == "imgcot" else f"reasoner_curve-{mode}.json")

    @property
    def sweep(self) -> Path:
        return self.root / "sweep.json"

    @property
    def report_md(self) -> Path:
        return self.root / "report.md"

    @property
    def report_json(self) -> Path:
        return self.root / "report.json"

    def predictions(self, split: str, mode: str = "imgcot") -> Path:
        return self.root / (f"predictions-{split}.jsonl" if mode == "imgcot" else f"predictions-{split}-{mode}.jsonl")

    def metrics(self, split: str, mode: str = "imgcot") -> Path:
        return self.root / (f"metrics-{split}.json" if mode == "imgcot" else f"metrics-{split}-{mode}.json")

    def manifest(self, stage: str) -> Path:
        return self.root / "manifests" / f"{stage}.json"


def workspace(cfg: PipelineConfig) -> Workspace:
    return Workspace(cfg.work)


def digest_path(path: Path) -> str:
    """sha256 of a file, or of a directory's sorted (relative name, file digest) listing."""
    path = Path(path)
    if path.is_file():
        return file_digest(path)
    h = hashlib.sha256()
    for p in sorted(q for q in path.rglob("*") if q.is_file()):
        h.update(f"{p.relative_to(path).as_posix()}\0{file_digest(p)}\n".encode())
    return h.hexdigest()


def write_manifest(cfg: PipelineConfig, stage: str, inputs, outputs, extra: dict | None = None) -> Path:
    ws = workspace(cfg)
    record = {
        "stage": stage,
        "version": __version__,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "inputs": {str(p): digest_path(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): digest_path(p) for p in outputs if Path(p).exists()},
    }
    if extra:
        record.update(extra)
    path = ws.manifest(stage)
    atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def write_json(path: Path, data) -> None:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: Path, stage: str | None = None):
    return json.loads(require(path, stage).read_text())


# task ------------------------------------------------------------------


def generate_task(cfg: PipelineConfig) -> list:
    from imgcot.tasks import generate

    ws = workspace(cfg)
    t = cfg.task
    train, test = generate(t.n_train, t.n_test, cfg.seed, (t.min_hops, t.max_hops),
                           (t.min_distractors, t.max_distractors))
    records = [it.to_record() for it in train + test]
    write_jsonl(ws.items, records)
    # text corpus for the scorer and gamma: 100 training traces per file, separated by blank lines
    for i in range(0, len(train), 100):
        atomic_write_text(ws.corpus_dir / f"part-{i // 100:04d}.txt", "\n\n".join(it.cot for it in train[i:i + 100]) + "\n")
    write_manifest(cfg, "generate-task", [], [ws.items, ws.corpus_dir])
    return records


def load_items(cfg: PipelineConfig, stage: str) -> list:
    return read_jsonl(workspace(cfg).items, stage)


# render ----------------------------------------------------------------


def render_corpus(cfg: PipelineConfig, items_path=None) -> list:
    """Render every record's trace to PGM pages plus a layout sidecar."""
    from imgcot.render import render_text, write_page, write_sidecar

    ws = workspace(cfg)
    items_path = Path(items_path) if items_path else ws.items
    records = read_jsonl(items_path, "render")
    rcfg = cfg.render_config()
    index = []
    for rec in records:
        pages = render_text(rec["cot"], rcfg)
        names = []
        for k, page in enumerate(pages):
            name = f"{rec['id']}-p{k}.pgm"
            write_page(page, ws.pages_dir / name)
            names.append(name)
        write_sidecar(pages[0].layout, ws.pages_dir / f"{rec['id']}.layout.jsonl")
        index.append({"id": rec["id"], "split": rec.get("split", ""), "pages": names,
                      "font_size": pages[0].layout.font_size})
    write_jsonl(ws.pages_index, index)
    write_manifest(cfg, "render", [items_path], [ws.pages_dir])
    return index


def render_single(cfg: PipelineConfig, text: str, out_dir) -> list:
    from imgcot.render import render_text, write_page, write_sidecar

    out_dir = Path(out_dir)
    pages = render_text(text, cfg.render_config())
    paths = []
    for k, page in enumerate(pages):
        path = out_dir / f"page-{k}.pgm"
        write_page(page, path)
        paths.append(path)
    write_sidecar(pages[0].layout, out_dir / "layout.jsonl")
    return paths


def load_pages(cfg: PipelineConfig, stage: str, split: str | None = None) -> tuple:
    """``(ids, first_pages)`` for indexed records, optionally restricted to one split."""
    from imgcot.render import read_page

    ws = workspace(cfg)
    index = read_jsonl(ws.pages_index, stage)
    rows = [r for r in index if split is None or r["split"] == split]
    if not rows:
        raise ContractError(f"no rendered pages for split {split!r}")
    pages = np.stack([read_page(ws.pages_dir / r["pages"][0]).pixels for r in rows])
    return [r["id"] for r in rows], pages


# tokenizer -------------------------------------------------------------


def train_tokenizer_stage(cfg: PipelineConfig, progress=None):
    from imgcot.vqtok import save_tokenizer, train_tokenizer

    ws = workspace(cfg)
    _, pages = load_pages(cfg, "train-tokenizer", split="train")
    net, reports = train_tokenizer(pages, cfg.tokenizer_config(), cfg.tokenizer_settings(), progress=progress)
    save_tokenizer(net, ws.tokenizer)
    curve = [{"step": r.step, "rec": r.rec, "codebook": r.codebook, "commit": r.commit} for r in reports]
    write_json(ws.tokenizer_curve, curve)
    write_manifest(cfg, "train-tokenizer", [ws.pages_index], [ws.tokenizer, ws.tokenizer_curve])
    return net, reports


def encode_corpus(cfg: PipelineConfig) -> list:
    """One latent record per trace: page ids, code indices and code rows for each page."""
    from imgcot.render import read_page
    from imgcot.vqtok import encode_pages, load_tokenizer

    ws = workspace(cfg)
    net = load_tokenizer(require(ws.tokenizer, "encode-corpus"))
    index = read_jsonl(ws.pages_index, "encode-corpus")
    names = [n for r in index for n in r["pages"]]
    pages = np.stack([read_page(ws.pages_dir / n).pixels for n in names])
    codes = dict(zip(names, encode_pages(net, pages)))
    records = []
    for r in index:
        cs = [codes[n] for n in r["pages"]]
        records.append({
            "id": r["id"],
            "page_ids": r["pages"],
            "indices": [c.indices.tolist() for c in cs],
            "embeddings": [c.embeddings.astype(np.float64).tolist() for c in cs],
        })
    write_jsonl(ws.latents, records)
    write_manifest(cfg, "encode-corpus", [ws.tokenizer, ws.pages_index], [ws.latents])
    return records


def load_latents(cfg: PipelineConfig, stage: str) -> dict:
    """id -> (n, d) latent rows of the first page."""
    ws = workspace(cfg)
    out = {}
    for rec in read_jsonl(ws.latents, stage):
        out[rec["id"]] = np.asarray(rec["embeddings"][0], dtype=np.float64)
    return out


# dataset -----------------------------------------------------------------


def build_dataset(cfg: PipelineConfig) -> list:
    ws = workspace(cfg)
    items = load_items(cfg, "build-dataset")
    if not ws.latents.exists():
        raise MissingInputError(ws.latents, "build-dataset")
    latent_ids = {r["id"]: len(r["page_ids"]) for r in read_jsonl(ws.latents, "build-dataset")}
    records = []
    for it in items:
        if it["id"] not in latent_ids:
            raise ContractError(f"no latent code for record {it['id']}")
        records.append({**it, "latent_ref": it["id"], "n_pages": latent_ids[it["id"]]})
    write_jsonl(ws.dataset, records)
    write_manifest(cfg, "build-dataset", [ws.items, ws.latents], [ws.dataset])
    return records


# scoring and filtering ---------------------------------------------------


def read_corpus(corpus_dir: Path, stage: str) -> tuple:
    """``(files, texts)``: every ``*.txt`` file in name order, split into texts at blank lines."""
    files = sorted(require(corpus_dir, stage).glob("*.txt"))
    if not files:
        raise MissingInputError(corpus_dir / "*.txt", stage)
    texts = []
    for f in files:
        texts.extend(t.strip("\n") for t in re.split(r"\n\s*\n", f.read_text()) if t.strip())
    return files, texts


def corpus_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.filter.corpus_dir) if cfg.filter.corpus_dir else workspace(cfg).corpus_dir


def train_scorer_stage(cfg: PipelineConfig):
    """Train the local confidence scorer: a small character LM over the text corpus."""
    from imgcot.numerics.tensor import default_dtype
    from imgcot.reasoner import ReasonerNet, Vocab, save_reasoner, train_text_model

    ws = workspace(cfg)
    files, texts = read_corpus(corpus_path(cfg), "train-scorer")
    vocab = Vocab()
    with default_dtype(np.float32):
        net = ReasonerNet(cfg.scorer_config(vocab.size))
    curve = train_text_model(texts, net, vocab, cfg.scorer_settings())
    save_reasoner(net, vocab, ws.scorer)
    write_json(ws.scorer_curve, curve)
    write_manifest(cfg, "train-scorer", files, [ws.scorer, ws.scorer_curve])
    return net, curve


def make_scorer(cfg: PipelineConfig):
    from imgcot.lmclient import LocalScorer, RemoteScorer

    if cfg.scorer.backend == "remote":
        return RemoteScorer(cfg.endpoint_config())
    ckpt = Path(cfg.scorer.checkpoint) if cfg.scorer.checkpoint else workspace(cfg).scorer
    return LocalScorer.from_checkpoint(require(ckpt, "scorer"), name=f"local:{ckpt.name}")


def compute_gamma(cfg: PipelineConfig, corpus_dir=None, scorer=None):
    from imgcot.filter import Aggregation, estimate_gamma, write_gamma

    ws = workspace(cfg)
    corpus_dir = Path(corpus_dir) if corpus_dir else corpus_path(cfg)
    files, texts = read_corpus(corpus_dir, "compute-gamma")
    scorer = scorer or make_scorer(cfg)
    est = estimate_gamma(texts, scorer, Aggregation(cfg.filter.aggregation), corpus_id=corpus_dir.name)
    out = Path(cfg.filter.gamma_file) if cfg.filter.gamma_file else ws.gamma
    write_gamma(est, out)
    write_manifest(cfg, "compute-gamma", files, [out])
    return est


def filter_corpus(cfg: PipelineConfig, scorer=None) -> list:
    from imgcot.filter import ELLIPSIS, filter_trace, read_gamma

    ws = workspace(cfg)
    gamma_path = Path(cfg.filter.gamma_file) if cfg.filter.gamma_file else ws.gamma
    est = read_gamma(require(gamma_path, "filter-corpus"))
    records = read_jsonl(ws.dataset, "filter-corpus")
    scorer = scorer or make_scorer(cfg)
    out = []
    for rec in records:
        trace = filter_trace(rec["cot"], est.gamma, scorer, cfg.filter.delimiters)
        out.append({**rec, "filtered_cot": trace.text,
                    "filtered_items": [None if it is ELLIPSIS else it for it in trace.items],
                    "kept_steps": list(trace.kept), "step_means": list(trace.means)})
    write_jsonl(ws.filtered, out)
    write_manifest(cfg, "filter-corpus", [ws.dataset, gamma_path], [ws.filtered], {"gamma": est.gamma})
    return out


def trace_from_record(rec: dict):
    from imgcot.filter import ELLIPSIS, FilteredTrace

    items = tuple(ELLIPSIS if it is None else it for it in rec["filtered_items"])
    n_steps = len(rec["step_means"])
    return FilteredTrace(items, tuple(rec["kept_steps"]), tuple(rec["step_means"]),
                         rec["cot"] if len(rec["kept_steps"]) == n_steps else "")


# reasoner ------------------------------------------------------------------


def make_samples(cfg: PipelineConfig, records: list, latents: dict, vocab, mode: str) -> list:
    from imgcot.filter import build_limgcot_sample
    from imgcot.reasoner import assemble_sample

    d = cfg.tokenizer.dim
    samples = []
    for rec in records:
        z = latents[rec["latent_ref"]]
        if mode == "limgcot":
            samples.append(build_limgcot_sample(rec["question"], z, trace_from_record(rec), rec["answer"], vocab, d))
        else:
            samples.append(assemble_sample(rec["question"], z, rec["answer"], vocab, d))
    return samples


def dataset_records(cfg: PipelineConfig, stage: str, mode: str | None = None) -> list:
    ws = workspace(cfg)
    mode = mode or cfg.reasoner.mode
    path = ws.filtered if mode == "limgcot" else ws.dataset
    return read_jsonl(path, stage)


def train_reasoner_stage(cfg: PipelineConfig, progress=None):
    from imgcot.numerics.tensor import default_dtype
    from imgcot.reasoner import ReasonerNet, Vocab, save_reasoner, train_reasoner
    from imgcot.vqtok import load_tokenizer

    ws = workspace(cfg)
    mode = cfg.reasoner.mode
    records = [r for r in dataset_records(cfg, "train-reasoner", mode) if r["split"] == "train"]
    latents = load_latents(cfg, "train-reasoner")
    codebook = load_tokenizer(require(ws.tokenizer, "train-reasoner")).codebook.entries.data
    vocab = Vocab()
    samples = make_samples(cfg, records, latents, vocab, mode)
    with default_dtype(np.float32):
        net = ReasonerNet(cfg.reasoner_config(vocab.size))
    result = train_reasoner(samples, net, cfg.reasoner_settings(), vocab, ws.reasoner_dir(mode), codebook, progress)
    save_reasoner(net, vocab, ws.reasoner(mode), codebook)
    write_json(ws.reasoner_curve(mode), {"mode": mode, "curve": result.curve})
    inputs = [ws.filtered if mode == "limgcot" else ws.dataset, ws.latents, ws.tokenizer]
    outputs = [ws.reasoner(mode), ws.reasoner_curve(mode), ws.reasoner_dir(mode)]
    write_manifest(cfg, f"train-reasoner-{mode}", inputs, outputs)
    return net, result


def extract_answer(text: str, mode: str) -> str:
    return text.rsplit("\n", 1)[-1] if mode == "limgcot" else text


def infer_question(cfg: PipelineConfig, question: str, net=None, vocab=None, codebook=None):
    from imgcot.reasoner import infer, load_reasoner

    if net is None:
        net, vocab, codebook = load_reasoner(require(workspace(cfg).reasoner(cfg.reasoner.mode), "infer"))
    return infer(net, question, vocab, cfg.tokenizer.n_latent, codebook, cfg.reasoner.requantize,
                 cfg.reasoner.max_text_len)


def evaluate_split(cfg: PipelineConfig, split: str = "test", limit: int | None = None) -> dict:
    from imgcot.reasoner import load_reasoner

    ws = workspace(cfg)
    mode = cfg.reasoner.mode
    net, vocab, codebook = load_reasoner(require(ws.reasoner(mode), "infer"))
    records = [r for r in read_jsonl(ws.items, "infer") if r["split"] == split][:limit]
    if not records:
        raise ContractError(f"no records in split {split!r}")
    preds = []
    for rec in records:
        res = infer_question(cfg, rec["question"], net, vocab, codebook)
        answer = extract_answer(res.text, mode)
        preds.append({"id": rec["id"], "question": rec["question"], "expected": rec["answer"], "output": res.text,
                      "answer": answer, "correct": answer == rec["answer"], "latent_tokens": res.latent_tokens,
                      "text_tokens": res.text_tokens, "truncated": res.truncated})
    metrics = summarize_predictions(preds)
    metrics.update({"split": split, "mode": mode})
    write_jsonl(ws.predictions(split, mode), preds)
    write_json(ws.metrics(split, mode), metrics)
    write_manifest(cfg, f"infer-{split}-{mode}", [ws.reasoner(mode), ws.items],
                   [ws.predictions(split, mode), ws.metrics(split, mode)])
    return metrics


def summarize_predictions(preds: list) -> dict:
    n = len(preds)
    return {
        "count": n,
        "accuracy": sum(p["correct"] for p in preds) / n,
        "latent_tokens_mean": sum(p["latent_tokens"] for p in preds) / n,
        "latent_tokens_min": min(p["latent_tokens"] for p in preds),
        "latent_tokens_max": max(p["latent_tokens"] for p in preds),
        "text_tokens_mean": sum(p["text_tokens"] for p in preds) / n,
        "truncated": sum(p["truncated"] for p in preds),
    }


# latent-count sweep ----------------------------------------------------------


def latent_sweep(cfg: PipelineConfig, progress=None) -> list:
    """Small-scale rerun of tokenizer + reasoner for each latent count.

    Uses the first ``sweep.n_train`` training and ``sweep.n_test`` test
    records with shortened schedules; results go to ``sweep.json``.
    """
    from imgcot.numerics.tensor import default_dtype
    from imgcot.reasoner import ReasonerNet, Vocab, assemble_sample, infer, train_reasoner
    from imgcot.vqtok import encode_pages, train_tokenizer

    ws = workspace(cfg)
    sw = cfg.sweep
    ids, pages = load_pages(cfg, "report")
    items = {r["id"]: r for r in load_items(cfg, "report")}
    train_idx = [i for i, k in enumerate(ids) if items[k]["split"] == "train"][: sw.n_train]
    test_idx = [i for i, k in enumerate(ids) if items[k]["split"] == "test"][: sw.n_test]
    vocab = Vocab()
    rows = []
    for n in sw.latent_counts:
        sub = replace(cfg, tokenizer=replace(cfg.tokenizer, n_latent=n),
                      tokenizer_train=replace(cfg.tokenizer_train, steps=sw.tokenizer_steps,
                                              continuous_steps=sw.continuous_steps),
                      reasoner_train=replace(cfg.reasoner_train, epochs=sw.epochs))
        tok, reports = train_tokenizer(pages[train_idx], sub.tokenizer_config(), sub.tokenizer_settings())
        codes = encode_pages(tok, pages[train_idx + test_idx])
        samples = [assemble_sample(items[ids[i]]["question"], c, items[ids[i]]["answer"], vocab, cfg.tokenizer.dim)
                   for i, c in zip(train_idx, codes)]
        with default_dtype(np.float32):
            net = ReasonerNet(sub.reasoner_config(vocab.size))
        result = train_reasoner(samples, net, sub.reasoner_settings())
        book = tok.codebook.entries.data
        correct = 0
        for i in test_idx:
            res = infer(net, items[ids[i]]["question"], vocab, n, book, cfg.reasoner.requantize, cfg.reasoner.max_text_len)
            correct += res.text == items[ids[i]]["answer"]
        row = {"n_latent": n, "accuracy": correct / len(test_idx), "final_rec": reports[-1].rec,
               "final_loss": result.curve[-1], "n_train": len(train_idx), "n_test": len(test_idx)}
        rows.append(row)
        log.info("sweep n=%d accuracy %.3f", n, row["accuracy"])
        if progress:
            progress(row)
    write_json(ws.sweep, rows)
    write_manifest(cfg, "sweep", [ws.pages_index, ws.items], [ws.sweep])
    return rows


# report ------------------------------------------------------------------------


def token_accounting(cfg: PipelineConfig) -> dict:
    """Mean output lengths (tokens) for answer-only, filtered-trace and full-trace targets."""
    from imgcot.filter import full_cot_output
    from imgcot.reasoner import Vocab

    ws = workspace(cfg)
    vocab = Vocab()
    out = {"latent_tokens": cfg.tokenizer.n_latent}
    if ws.dataset.exists():
        recs = read_jsonl(ws.dataset)
        out["full_cot_tokens_mean"] = float(np.mean([len(full_cot_output(r["cot"], r["answer"], vocab)) for r in recs]))
        out["answer_tokens_mean"] = float(np.mean([len(vocab.encode(r["answer"])) for r in recs]))
    if ws.filtered.exists():
        recs = read_jsonl(ws.filtered)
        lens = [len(trace_from_record(r).token_ids(vocab)) + 1 + len(vocab.encode(r["answer"])) for r in recs]
        out["filtered_cot_tokens_mean"] = float(np.mean(lens))
        out["filtered_fraction_of_steps"] = float(np.mean([1 - len(r["kept_steps"]) / len(r["step_means"]) for r in recs]))
    return out


MODES = ("imgcot", "limgcot")


def build_report(cfg: PipelineConfig) -> tuple:
    ws = workspace(cfg)
    data = {"config_digest": cfg.digest(), "tokens": token_accounting(cfg), "reasoner": {}, "metrics": {}}
    inputs = []
    if ws.tokenizer_curve.exists():
        curve = read_json(ws.tokenizer_curve)
        data["tokenizer"] = {"steps": len(curve), "rec_first": curve[0]["rec"], "rec_last": curve[-1]["rec"]}
        inputs.append(ws.tokenizer_curve)
    if ws.scorer_curve.exists():
        data["scorer_curve"] = read_json(ws.scorer_curve)
        inputs.append(ws.scorer_curve)
    for mode in MODES:
        if ws.reasoner_curve(mode).exists():
            data["reasoner"][mode] = read_json(ws.reasoner_curve(mode))["curve"]
            inputs.append(ws.reasoner_curve(mode))
        for split in ("test", "train"):
            if ws.metrics(split, mode).exists():
                data["metrics"][f"{mode}/{split}"] = read_json(ws.metrics(split, mode))
                inputs.append(ws.metrics(split, mode))
    if ws.gamma.exists():
        data["gamma"] = read_json(ws.gamma)
        inputs.append(ws.gamma)
    if ws.sweep.exists():
        data["sweep"] = read_json(ws.sweep)
        inputs.append(ws.sweep)
    md = render_report(data)
    write_json(ws.report_json, data)
    atomic_write_text(ws.report_md, md)
    write_manifest(cfg, "report", inputs, [ws.report_json, ws.report_md])
    return data, md


def _curve_table(title: str, curves: dict) -> list:
    names = sorted(curves)
    rows = max(len(curves[n]) for n in names)
    lines = ["", f"## {title}", "", "| epoch | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    for i in range(rows):
        cells = [f"{curves[n][i]:.5f}" if i < len(curves[n]) else "" for n in names]
        lines.append(f"| {i} | " + " | ".join(cells) + " |")
    return lines


def render_report(data: dict) -> str:
    lines = ["# Run report", ""]
    tok = data["tokens"]
    lines += ["## Token accounting", "", "| quantity | value |", "|---|---|"]
    for key in sorted(tok):
        val = tok[key]
        lines.append(f"| {key} | {val:.3f} |" if isinstance(val, float) else f"| {key} | {val} |")
    for name in sorted(data["metrics"]):
        m = data["metrics"][name]
        lines += ["", f"## Inference ({name})", "",
                  f"- exact match: {m['accuracy']:.4f} over {m['count']} items",
                  f"- latent tokens per inference: mean {m['latent_tokens_mean']:.2f} "
                  f"(min {m['latent_tokens_min']}, max {m['latent_tokens_max']})",
                  f"- text tokens per inference: mean {m['text_tokens_mean']:.2f}",
                  f"- truncated outputs: {m['truncated']}"]
    if "tokenizer" in data:
        t = data["tokenizer"]
        lines += ["", "## Tokenizer", "", f"- steps: {t['steps']}",
                  f"- reconstruction loss: {t['rec_first']:.5f} -> {t['rec_last']:.5f}"]
    if "gamma" in data:
        g = data["gamma"]
        lines += ["", "## Confidence threshold", "",
                  f"- gamma: {g['gamma']:.6f} ({g['mode']} over {g['token_count']} tokens, scorer {g['scorer']})"]
    curves = dict(data["reasoner"])
    if "scorer_curve" in data:
        curves["scorer"] = data["scorer_curve"]
    if curves:
        lines += _curve_table("Loss curves (mean loss per epoch)", curves)
    lines += ["", "## Latent-count sweep", ""]
    if "sweep" in data:
        lines += ["| n latent | accuracy | final reasoner loss | final reconstruction loss |", "|---|---|---|---|"]
        lines += [f"| {r['n_latent']} | {r['accuracy']:.3f} | {r['final_loss']:.5f} | {r['final_rec']:.5f} |"
                  for r in data["sweep"]]
        accs = [r["accuracy"] for r in data["sweep"]]
        best = data["sweep"][int(np.argmax(accs))]["n_latent"]
        monotone = all(a <= b for a, b in zip(accs, accs[1:]))
        lines += ["", f"Best latent count: {best}. Accuracy is {'monotone' if monotone else 'not monotone'} in n."]
    else:
        lines.append("Not run (use `report --sweep`).")
    return "\n".join(lines) + "\n"
