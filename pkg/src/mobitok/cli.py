"""Command-line driver: ``mobitok <subcommand> --config pipeline.toml [--set section.key=value]...``.

Every stage reads the artifacts of earlier stages from ``paths.output_dir``
and writes into its own subfolder, each with a ``manifest.json`` carrying a
``format_version``. Exit status: 0 on success, 2 for configuration errors,
1 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import describe, embed, evalkit, ingest, quantizer, sft, tokens
from .config import PipelineConfig, load_config
from .decoder import NgramScorer, fit_from_trajectories
from .errors import ConfigError, MobitokError
from .geo import Location

log = logging.getLogger("mobitok")

FORMAT_VERSION = 1
SPLITS = ("train", "validation", "test")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _stage_dir(cfg: PipelineConfig, name: str) -> Path:
    d = cfg.output_dir / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `mobitok {producer}` first")
    return path


def _manifest(cfg: PipelineConfig, stage: str, **extra) -> dict:
    return {"format_version": FORMAT_VERSION, "stage": stage, **extra}


def _splits(cfg: PipelineConfig) -> ingest.DatasetSplit:
    d = cfg.output_dir / "ingest"
    parts = {s: ingest.read_trajectories(_need(d / f"{s}.jsonl", "ingest")) for s in SPLITS}
    return ingest.DatasetSplit(parts["train"], parts["validation"], parts["test"])


def _locations(cfg: PipelineConfig) -> list[Location]:
    return ingest.load_locations(cfg.path("locations"))


def _token_map(cfg: PipelineConfig) -> tokens.TokenMap:
    return tokens.TokenMap.load(_need(cfg.output_dir / "tokenize" / "token_map.json", "tokenize"))


def _scorer(cfg: PipelineConfig) -> NgramScorer:
    return NgramScorer.load(_need(cfg.output_dir / "scorer" / "ngram.json", "fit-scorer"))


# ------------------------------------------------------------------ stages

def cmd_ingest(cfg: PipelineConfig) -> None:
    c = cfg.ingest
    records = ingest.parse_checkins(cfg.path("checkins"), cfg.paths.checkins_format)
    kept = ingest.filter_sparse_locations(records, c.min_visits)
    trajs = ingest.build_trajectories(kept, c.gap_hours, c.min_len)
    split = ingest.chronological_split(trajs, c.fractions)
    out = _stage_dir(cfg, "ingest")
    for name, part in split.parts().items():
        ingest.write_trajectories(out / f"{name}.jsonl", part)
    counts = {name: len(part) for name, part in split.parts().items()}
    _write_json(
        out / "manifest.json",
        _manifest(cfg, "ingest", records=len(records), records_kept=len(kept), trajectories=len(trajs), splits=counts),
    )
    log.info("ingest: %d records, %d kept, %d trajectories %s", len(records), len(kept), len(trajs), counts)


def cmd_describe(cfg: PipelineConfig) -> None:
    c = cfg.describe
    train = _splits(cfg).train
    visits = describe.count_visits(loc for t in train for loc in t.location_ids)
    descs = describe.describe_all(_locations(cfg), visits, c.radius_km, c.k, c.geohash_precision)
    out = _stage_dir(cfg, "describe")
    describe.write_descriptions(out / "descriptions.jsonl", descs)
    _write_json(out / "manifest.json", _manifest(cfg, "describe", count=len(descs)))


def cmd_embed(cfg: PipelineConfig) -> None:
    out = _stage_dir(cfg, "embed")
    external = cfg.path("embeddings")
    if external is not None:
        table = embed.load_embeddings(external)
        source = "external"
    else:
        descs = describe.read_descriptions(_need(cfg.output_dir / "describe" / "descriptions.jsonl", "describe"))
        table = embed.featurize_all(descs, cfg.embed.dim)
        source = "hash_featurizer"
    missing = sorted({l.id for l in _locations(cfg)} - set(table.ids))
    if missing:
        raise ValueError(f"{len(missing)} locations have no embedding, first {missing[0]!r}")
    embed.save_embeddings(out / "embeddings.json", table)
    _write_json(out / "manifest.json", _manifest(cfg, "embed", source=source, count=len(table), dim=table.dim))


def _train_model(cfg: PipelineConfig, qcfg: quantizer.QuantizerConfig, out: Path):
    table = embed.load_embeddings(_need(cfg.output_dir / "embed" / "embeddings.json", "embed"))
    model, history = quantizer.train(table, qcfg)
    quantizer.save_model(out / "model.json", model, qcfg, history)
    return table, model, history


def cmd_train_quantizer(cfg: PipelineConfig) -> None:
    out = _stage_dir(cfg, "quantizer")
    _, _, history = _train_model(cfg, cfg.quantizer, out)
    final = history[-1] if history else {}
    _write_json(out / "manifest.json", _manifest(cfg, "train-quantizer", epochs=len(history), final=final))


def _tokenize(table: embed.EmbeddingTable, model: quantizer.RqVaeModel, out: Path) -> tuple[tokens.TokenMap, dict]:
    codes, zhats = quantizer.tokenize_all(table, model)
    tmap = tokens.assign_tokens(codes)
    tokens.build_trie(tmap)  # rejects non-prefix-free maps before anything is written
    tmap.save(out / "token_map.json")
    embed.save_embeddings(out / "zhat.json", embed.EmbeddingTable.from_mapping(zhats))
    raw = {tuple(c) for c in codes.values()}
    K = model.codebook_size
    util = quantizer.utilization([c for _, c in sorted(codes.items())], K) if codes else []
    stats = {"count": len(tmap), "distinct_codes": len(raw), "collisions": len(codes) - len(raw), "utilization": util}
    return tmap, stats


def cmd_tokenize(cfg: PipelineConfig) -> None:
    out = _stage_dir(cfg, "tokenize")
    model, _, _ = quantizer.load_model(_need(cfg.output_dir / "quantizer" / "model.json", "train-quantizer"))
    table = embed.load_embeddings(_need(cfg.output_dir / "embed" / "embeddings.json", "embed"))
    _, stats = _tokenize(table, model, out)
    _write_json(out / "manifest.json", _manifest(cfg, "tokenize", **stats))


def cmd_build_sft(cfg: PipelineConfig) -> None:
    c = cfg.sft
    locs = _locations(cfg)
    descs = describe.read_descriptions(_need(cfg.output_dir / "describe" / "descriptions.jsonl", "describe"))
    scfg = sft.SftConfig(c.ratios, c.template_version, c.seed, c.timezone or None, c.profile_k)
    split = _splits(cfg)
    examples, manifest = sft.build_dataset(split, _token_map(cfg), {l.id: l.category for l in locs}, descs, scfg)
    leaked = sft.leaked_examples(examples, split.validation + split.test)
    if leaked:
        raise ValueError(f"{len(leaked)} examples come from held-out trajectories")
    out = _stage_dir(cfg, "sft")
    sft.write_dataset(out / "dataset.jsonl", examples)
    _write_json(out / "manifest.json", {**manifest, "stage": "build-sft"})


def cmd_fit_scorer(cfg: PipelineConfig) -> None:
    c = cfg.decode
    train = _splits(cfg).train
    scorer = fit_from_trajectories(train, _token_map(cfg), c.order, c.k)
    out = _stage_dir(cfg, "scorer")
    scorer.save(out / "ngram.json")
    _write_json(out / "manifest.json", _manifest(cfg, "fit-scorer", order=c.order, k=c.k, trajectories=len(train)))


def _predict(cfg: PipelineConfig) -> list[evalkit.Prediction]:
    tmap = _token_map(cfg)
    return evalkit.predict_next(
        _scorer(cfg), tokens.build_trie(tmap), tmap, _splits(cfg).test, cfg.decode.width, cfg.decode.topn
    )


def cmd_predict(cfg: PipelineConfig) -> None:
    preds = _predict(cfg)
    out = _stage_dir(cfg, "predict")
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")
    _write_json(
        out / "manifest.json",
        _manifest(cfg, "predict", count=len(preds), width=cfg.decode.width, topn=cfg.decode.topn),
    )


def cmd_evaluate(cfg: PipelineConfig) -> None:
    path = cfg.output_dir / "predict" / "predictions.jsonl"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            preds = [evalkit.Prediction.from_dict(json.loads(line)) for line in fh if line.strip()]
    else:
        log.info("evaluate: %s missing, decoding test trajectories now", path)
        preds = _predict(cfg)
    report = evalkit.report_next(preds, cfg.eval.ks, {"width": cfg.decode.width, "topn": cfg.decode.topn})
    out = _stage_dir(cfg, "evaluate")
    evalkit.write_reports(out / "report.json", report, out / "report.csv")
    log.info("evaluate: %s", ", ".join(f"{k}={v:.4f}" for k, v in report.metrics.items()))


def cmd_recover(cfg: PipelineConfig) -> None:
    tmap = _token_map(cfg)
    reports = evalkit.evaluate_recovery(
        _scorer(cfg),
        tokens.build_trie(tmap),
        tmap,
        _splits(cfg).test,
        cfg.eval.ratios,
        cfg.eval.ks,
        cfg.eval.seed,
        cfg.decode.width,
        cfg.decode.topn,
    )
    out = _stage_dir(cfg, "recover")
    evalkit.write_reports(out / "report.json", reports, out / "report.csv")


def cmd_consistency(cfg: PipelineConfig) -> None:
    table = embed.load_embeddings(_need(cfg.output_dir / "tokenize" / "zhat.json", "tokenize"))
    report = evalkit.consistency_study(table.as_dict(), _locations(cfg), cfg.consistency.seed, cfg.consistency.group_size)
    out = _stage_dir(cfg, "consistency")
    _write_json(out / "report.json", report.to_dict())


def cmd_sweep(cfg: PipelineConfig) -> None:
    """Train, tokenize, fit and evaluate next-location prediction for every (K, L) cell."""
    root = _stage_dir(cfg, "sweep")
    split = _splits(cfg)
    rows = []
    for L in cfg.sweep.levels:
        for K in cfg.sweep.codebook_sizes:
            cell = root / f"K{K}_L{L}"
            cell.mkdir(exist_ok=True)
            qcfg = replace(cfg.quantizer, codebook_size=K, levels=L)
            table, model, history = _train_model(cfg, qcfg, cell)
            tmap, stats = _tokenize(table, model, cell)
            scorer = fit_from_trajectories(split.train, tmap, cfg.decode.order, cfg.decode.k)
            report = evalkit.evaluate_next_location(
                scorer, tokens.build_trie(tmap), tmap, split.test, cfg.eval.ks, cfg.decode.width, cfg.decode.topn
            )
            report.config.update({"codebook_size": K, "levels": L, **stats})
            evalkit.write_reports(cell / "report.json", report)
            rows.append(report)
    buf = io.StringIO()
    names = evalkit.metric_names(cfg.eval.ks)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["codebook_size", "levels", "collisions", *names])
    for r in rows:
        w.writerow([r.config["codebook_size"], r.config["levels"], r.config["collisions"], *[f"{r.metrics[n]:.6f}" for n in names]])
    (root / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    _write_json(
        root / "manifest.json",
        _manifest(cfg, "sweep", cells=[f"K{r.config['codebook_size']}_L{r.config['levels']}" for r in rows]),
    )


# Subcommand -> (handler, module named in runtime diagnostics)
COMMANDS: dict[str, tuple[Callable[[PipelineConfig], None], str]] = {
    "ingest": (cmd_ingest, "ingest"),
    "describe": (cmd_describe, "describe"),
    "embed": (cmd_embed, "embed"),
    "train-quantizer": (cmd_train_quantizer, "quantizer"),
    "tokenize": (cmd_tokenize, "token_index"),
    "build-sft": (cmd_build_sft, "sft_builder"),
    "fit-scorer": (cmd_fit_scorer, "decoder"),
    "predict": (cmd_predict, "decoder"),
    "recover": (cmd_recover, "evalkit"),
    "evaluate": (cmd_evaluate, "evalkit"),
    "consistency": (cmd_consistency, "evalkit"),
    "sweep": (cmd_sweep, "evalkit"),
}

# The order the full pipeline runs in.
PIPELINE = (
    "ingest",
    "describe",
    "embed",
    "train-quantizer",
    "tokenize",
    "build-sft",
    "fit-scorer",
    "predict",
    "evaluate",
    "recover",
    "consistency",
)


def run(subcommand: str, config: str | Path | None, overrides: Sequence[str] = (), stderr=None) -> int:
    stderr = stderr or sys.stderr
    if subcommand not in COMMANDS:
        print(f"error[cli]: unknown subcommand {subcommand!r}; choose from {', '.join(COMMANDS)}", file=stderr)
        return 2
    handler, module = COMMANDS[subcommand]
    try:
        cfg = load_config(config, overrides)
        cfg.validate()
    except ConfigError as exc:
        print(f"error[config]: field {exc.field!r}: {exc}", file=stderr)
        return 2
    try:
        handler(cfg)
    except ConfigError as exc:
        print(f"error[{module}]: field {exc.field!r}: {exc}", file=stderr)
        return 2
    except (MobitokError, OSError, ValueError, KeyError, RuntimeError) as exc:
        tag = getattr(exc, "module", None)
        tag = module if tag in (None, "mobitok") else tag
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error[{tag}]: {type(exc).__name__}: {msg}", file=stderr)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="mobitok", description="Semantic location tokenization pipeline.")
    ap.add_argument("subcommand", help=f"one of: {', '.join(COMMANDS)}")
    ap.add_argument("--config", required=True, help="pipeline TOML file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return run(args.subcommand, args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
