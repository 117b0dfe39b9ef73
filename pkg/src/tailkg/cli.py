"""Command-line front end: one subcommand per pipeline stage, artifacts in a run directory."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import filelock

from tailkg import kg, retrieval
from tailkg.amr.model import Hyper, RankerModel
from tailkg.amr.penman import iter_penman_blocks
from tailkg.amr.train import TrainConfig, load_training_jsonl, train
from tailkg.benchgen import (
    AuditManifest,
    EntityTriples,
    GenerationSettings,
    audit_sample,
    error_rates,
    generate_dataset,
)
from tailkg.config import Config, load_config
from tailkg.core import (
    LEVELS,
    OutOfRange,
    PopularityRecord,
    SampleKind,
    TailKGError,
    check_samples_file,
    dumps,
    expand_items,
    load_samples,
    read_jsonl,
    write_jsonl,
)
from tailkg.evaluation import aggregate, format_table, score_item
from tailkg.gateway import Gateway, ServiceEndpoint, Transport
from tailkg.popularity import SamplingPlan, Window, compute_wpv, fetch_pageviews, reservoir_sample, sample_entities

log = logging.getLogger("tailkg")

MANIFEST_FILE = "manifests.json"
LOCK_FILE = ".lock"


class FatalError(Exception):
    """Stage-level failure: the command exits nonzero."""


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    subcommand: str
    stage: str
    config_digest: str
    input_digests: dict[str, str]
    seed: int
    mode: str
    params: dict[str, Any]
    output_digests: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def key(self) -> tuple:
        return (self.config_digest, dumps(self.input_digests), self.seed, dumps(self.params))

    def to_dict(self) -> dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "stage": self.stage,
            "config_digest": self.config_digest,
            "input_digests": self.input_digests,
            "seed": self.seed,
            "mode": self.mode,
            "params": self.params,
            "output_digests": self.output_digests,
            "started": self.started,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunManifest":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class RunDir:
    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = root / MANIFEST_FILE

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def manifests(self) -> dict[str, RunManifest]:
        if not self.manifest_path.exists():
            return {}
        raw = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {k: RunManifest.from_dict(v) for k, v in raw.items()}

    def save_manifest(self, m: RunManifest) -> None:
        all_m = self.manifests()
        all_m[m.stage] = m
        text = json.dumps({k: v.to_dict() for k, v in sorted(all_m.items())}, indent=2, sort_keys=True)
        self.manifest_path.write_text(text + "\n", encoding="utf-8")

    def up_to_date(self, m: RunManifest, outputs: Sequence[str]) -> bool:
        old = self.manifests().get(m.stage)
        if old is None or old.key() != m.key():
            return False
        for name in outputs:
            p = self.root / name
            if not p.exists() or old.output_digests.get(name) != file_digest(p):
                return False
        return True


@dataclass
class Context:
    args: argparse.Namespace
    config: Config
    run: RunDir
    gateway: Gateway
    seed: int

    def endpoint(self, name: str) -> ServiceEndpoint:
        ep = self.config.endpoint(name)
        if ep is None:
            raise FatalError(f"service {name!r} is not configured under services:")
        return ep

    def optional_endpoint(self, name: str) -> Optional[ServiceEndpoint]:
        return self.config.endpoint(name)


def _pmap(fn: Callable[[Any], Any], items: Sequence[Any], workers: int) -> list[Any]:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _require(path: Optional[Path], what: str) -> Path:
    if path is None or not path.exists():
        raise FatalError(f"{what} not found: {path}")
    return path


# --------------------------------------------------------------------------
# Stages: declared inputs, params and outputs, plus the work itself
# --------------------------------------------------------------------------


@dataclass
class Stage:
    name: str
    inputs: dict[str, Path]
    params: dict[str, Any]
    outputs: list[str]
    run: Callable[[], str]


def _read_candidates(path: Path) -> list[str]:
    ids = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        ids.append(json.loads(line)["id"] if line.startswith("{") else line)
    return ids


def stage_sample_entities(ctx: Context) -> Stage:
    cfg = ctx.config.section("sampling")
    cand_path = ctx.config.path("sampling", "candidates")

    def run() -> str:
        ids = _read_candidates(_require(cand_path, "candidate stream"))
        if cfg["pool_size"]:
            ids = reservoir_sample(ids, cfg["pool_size"], ctx.seed)
        ids = list(dict.fromkeys(ids))
        window = Window(**cfg["window"])
        language = ctx.config["language"]
        sparql, pv = ctx.endpoint("sparql"), ctx.endpoint("pageviews")
        links = kg.article_titles(ctx.gateway, sparql, ids, cfg["site"], language)
        records: list[PopularityRecord] = []
        excluded = []
        for qid in ids:
            link = links.get(qid)
            if link is None:
                excluded.append({"id": qid, "reason": "NoArticle"})
                continue
            try:
                series = fetch_pageviews(ctx.gateway, pv, link.entity, window, title=link.title)
                records.append(PopularityRecord.from_wpv(link.entity, compute_wpv(series), sparse=series.sparse))
            except OutOfRange as exc:
                excluded.append({"id": qid, "reason": f"OutOfRange: {exc}"})
            except TailKGError as exc:
                excluded.append({"id": qid, "reason": f"{type(exc).__name__}: {exc}"})
        plan = SamplingPlan({lvl: cfg["per_level"] for lvl in LEVELS}, ctx.seed, window)
        result = sample_entities(records, plan)
        write_jsonl(ctx.run / "popularity.jsonl", result.all_records())
        report = {
            "candidates": len(ids),
            "excluded": excluded,
            "selected": {lvl.value: len(result.by_level[lvl]) for lvl in LEVELS},
            "shortfall": {lvl.value: n for lvl, n in result.shortfall.items()},
        }
        (ctx.run / "sample_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return f"sampled {len(result.all_records())} entities from {len(ids)} candidates ({len(excluded)} excluded)"

    return Stage(
        "sample-entities",
        {"candidates": cand_path} if cand_path else {},
        {"sampling": cfg, "language": ctx.config["language"]},
        ["popularity.jsonl", "sample_report.json"],
        run,
    )


def stage_fetch_triples(ctx: Context) -> Stage:
    cfg = ctx.config.section("triples")
    src = ctx.run / "popularity.jsonl"

    def run() -> str:
        recs = [PopularityRecord.from_dict(d) for d in read_jsonl(_require(src, "popularity artifact"))]
        blocklist = kg.RelationBlocklist(dict(cfg["blocklist"]))
        sparql = ctx.endpoint("sparql")
        kept, excluded = [], []
        for rec in recs:
            try:
                triples = kg.filter_triples(
                    kg.fetch_triples(ctx.gateway, sparql, rec.entity, ctx.config["language"]), blocklist
                )
            except TailKGError as exc:
                excluded.append({"id": rec.entity.id, "reason": f"{type(exc).__name__}: {exc}"})
                continue
            reason = kg.eligibility_reason(triples, cfg["min_triples"], cfg["max_triples"])
            if reason:
                excluded.append({"id": rec.entity.id, "reason": reason})
                continue
            kept.append(EntityTriples(rec.entity, rec.level, tuple(triples), rec.wpv))
        write_jsonl(ctx.run / "triples.jsonl", kept)
        write_jsonl(ctx.run / "triples_excluded.jsonl", excluded)
        return f"{len(kept)} eligible entities, {len(excluded)} excluded"

    return Stage(
        "fetch-triples",
        {"popularity.jsonl": src},
        {"triples": cfg, "language": ctx.config["language"]},
        ["triples.jsonl", "triples_excluded.jsonl"],
        run,
    )


def stage_generate(ctx: Context) -> Stage:
    kind = SampleKind(ctx.args.kind)
    cfg = ctx.config.section("generation")
    src = ctx.run / "triples.jsonl"
    out, rep = f"benchmark_{kind.value}.jsonl", f"generation_report_{kind.value}.jsonl"

    def run() -> str:
        records = [EntityTriples.from_dict(d) for d in read_jsonl(_require(src, "triples artifact"))]
        settings = GenerationSettings(cfg["questions_per_entity"], cfg["temperature"], cfg["max_new_tokens"])
        samples, report = generate_dataset(
            records, kind, ctx.gateway, ctx.endpoint("chat"), ctx.seed, settings, cfg["workers"]
        )
        write_jsonl(ctx.run / out, samples)
        write_jsonl(ctx.run / rep, report)
        failed = sum(r.status != "ok" for r in report)
        return f"{len(samples)} {kind.value} samples from {len(records)} entities ({failed} failed)"

    return Stage(f"generate:{kind.value}", {"triples.jsonl": src}, {"kind": kind.value, "generation": cfg}, [out, rep], run)


def _setting_tag(args: argparse.Namespace) -> str:
    tag = args.knowledge
    if args.knowledge in ("kg", "both"):
        tag += f"-{args.ranker}"
        if args.oracle_entities:
            tag += "-oracle"
    return tag


def _samples_path(ctx: Context) -> Path:
    if getattr(ctx.args, "samples", None):
        return Path(ctx.args.samples)
    return ctx.run / f"benchmark_{ctx.args.kind}.jsonl"


def _load_amr(path: Optional[Path]) -> dict[str, Any]:
    if path is None:
        return {}
    graphs = {}
    for block in iter_penman_blocks(_require(path, "AMR graph file").read_text(encoding="utf-8")):
        if "id" in block.metadata:
            graphs[block.metadata["id"]] = block.graph
    return graphs


def stage_retrieve(ctx: Context) -> Stage:
    args = ctx.args
    cfg = ctx.config.section("retrieval")
    tag = _setting_tag(args)
    src = _samples_path(ctx)
    out = f"bundles_{args.kind}_{tag}.jsonl"
    inputs = {"samples": src}
    amr_path = ctx.config.path("retrieval", "amr_graphs")
    model_path = ctx.config.path("retrieval", "ranker_model")
    uses_amr = args.knowledge in ("kg", "both") and args.ranker == "amr"
    if uses_amr:
        if model_path is None:
            model_path = ctx.run / "ranker.bin"
        inputs["ranker_model"] = model_path
        if amr_path is not None:
            inputs["amr_graphs"] = amr_path

    def run() -> str:
        samples = load_samples(_require(src, "benchmark samples"))
        settings = retrieval.RetrievalSettings(
            mode=args.knowledge,
            ranker=args.ranker,
            oracle_entities=args.oracle_entities,
            seed=ctx.seed,
            language=ctx.config["language"],
            rho_threshold=cfg["rho_threshold"],
            max_entities=cfg["max_entities"],
            top_relations=cfg["top_relations"],
            triples_per_pair=cfg["triples_per_pair"],
            top_passages=cfg["top_passages"],
            blocklist=kg.RelationBlocklist(dict(ctx.config.section("triples")["blocklist"])),
        )
        needs_kg = args.knowledge in ("kg", "both")
        services = retrieval.RetrievalServices(
            ctx.gateway,
            tagger=ctx.endpoint("tagme") if needs_kg and not args.oracle_entities else None,
            sparql=ctx.endpoint("sparql") if needs_kg else None,
            chat=ctx.endpoint("chat") if needs_kg and args.ranker == "llm" else None,
            passages=ctx.endpoint("passages") if args.knowledge in ("passages", "both") else None,
            model=RankerModel.load(_require(model_path, "ranker model")) if uses_amr else None,
            amr_graphs=_load_amr(amr_path) if uses_amr else {},
        )
        items = [it for s in samples for it in expand_items(s)]

        def one(item) -> dict[str, Any]:
            rec: dict[str, Any] = {"item_id": item.item_id, "sample_id": item.sample.id}
            try:
                res = retrieval.retrieve(
                    item.item_id, item.query, item.sample.entity, services, settings, tagging_text=item.user_text
                )
            except TailKGError as exc:
                log.warning("retrieval failed for %s: %s", item.item_id, exc)
                rec.update(status="error", error=f"{type(exc).__name__}: {exc}")
                return rec
            rec.update(
                status="ok",
                bundle=res.bundle.to_dict(),
                entities=[e.to_dict() for e in res.entities],
                rankings=[r.to_dict() for r in res.rankings],
                predicted_pairs=sorted([list(p) for p in res.predicted_pairs]),
                warnings=res.warnings,
            )
            return rec

        records = _pmap(one, items, cfg["workers"])
        write_jsonl(ctx.run / out, records)
        failed = sum(r["status"] != "ok" for r in records)
        return f"{len(records)} bundles ({tag}), {failed} failed"

    params = {"kind": args.kind, "setting": tag, "retrieval": cfg, "language": ctx.config["language"]}
    return Stage(f"retrieve:{args.kind}:{tag}", inputs, params, [out], run)


def stage_answer(ctx: Context) -> Stage:
    args = ctx.args
    cfg = ctx.config.section("answer")
    tag = _setting_tag(args)
    src = _samples_path(ctx)
    bundles = ctx.run / f"bundles_{args.kind}_{tag}.jsonl"
    temperature = cfg["temperature"] if args.temperature is None else args.temperature
    max_new = cfg["max_new_tokens"] if args.max_new_tokens is None else args.max_new_tokens
    prompts, preds = f"prompts_{args.kind}_{tag}.jsonl", f"predictions_{args.kind}_{tag}.jsonl"

    def run() -> str:
        samples = load_samples(_require(src, "benchmark samples"))
        by_item = {r["item_id"]: r for r in read_jsonl(_require(bundles, "bundle artifact"))}
        chat = ctx.endpoint("chat")
        items = [it for s in samples for it in expand_items(s)]

        def one(item) -> tuple[Optional[dict], dict]:
            b = by_item.get(item.item_id)
            if b is None or b.get("status") != "ok":
                reason = "no bundle" if b is None else f"retrieval failed: {b.get('error')}"
                return None, {"item_id": item.item_id, "status": "error", "error": reason}
            req = retrieval.render_answer_prompt(
                retrieval.KnowledgeBundle.from_dict(b["bundle"]), item.history, temperature, max_new
            )
            prompt = {"item_id": item.item_id, **req.to_dict()}
            try:
                text = ctx.gateway.chat(chat, req)
            except TailKGError as exc:
                log.warning("answer failed for %s: %s", item.item_id, exc)
                return prompt, {"item_id": item.item_id, "status": "error", "error": f"{type(exc).__name__}: {exc}"}
            return prompt, {"item_id": item.item_id, "status": "ok", "text": text}

        results = _pmap(one, items, cfg["workers"])
        write_jsonl(ctx.run / prompts, [p for p, _ in results if p is not None])
        write_jsonl(ctx.run / preds, [r for _, r in results])
        failed = sum(r["status"] != "ok" for _, r in results)
        return f"{len(results)} predictions ({tag}), {failed} failed"

    params = {"kind": args.kind, "setting": tag, "temperature": temperature, "max_new_tokens": max_new}
    return Stage(f"answer:{args.kind}:{tag}", {"samples": src, "bundles": bundles}, params, [prompts, preds], run)


def stage_evaluate(ctx: Context) -> Stage:
    args = ctx.args
    cfg = ctx.config.section("evaluation")
    tag = _setting_tag(args)
    src = _samples_path(ctx)
    preds = ctx.run / f"predictions_{args.kind}_{tag}.jsonl"
    bundles = ctx.run / f"bundles_{args.kind}_{tag}.jsonl"
    report_name, table_name = f"report_{args.kind}_{tag}.jsonl", f"table_{args.kind}_{tag}.txt"
    use_nli = cfg["nli"] and ctx.optional_endpoint("nli") is not None
    inputs = {"samples": src, "predictions": preds}
    if bundles.exists():
        inputs["bundles"] = bundles

    def run() -> str:
        samples = load_samples(_require(src, "benchmark samples"))
        predictions = {
            r["item_id"]: r["text"] for r in read_jsonl(_require(preds, "predictions")) if r.get("status") == "ok"
        }
        pairs: dict[str, list[tuple[str, str]]] = {}
        if bundles.exists() and args.knowledge in ("kg", "both"):
            for r in read_jsonl(bundles):
                if r.get("status") == "ok":
                    pairs[r["item_id"]] = [tuple(p) for p in r.get("predicted_pairs", [])]
        nli = (ctx.gateway, ctx.endpoint("nli")) if use_nli else None
        scores, unscored = [], []
        for s in samples:
            for item in expand_items(s):
                text = predictions.get(item.item_id)
                if text is None:
                    unscored.append(item.item_id)
                    continue
                try:
                    scores.append(score_item(item, text, pairs.get(item.item_id) if pairs else None, nli))
                except TailKGError as exc:
                    log.warning("scoring failed for %s: %s", item.item_id, exc)
                    unscored.append(item.item_id)
        report = aggregate(scores, unscored)
        write_jsonl(ctx.run / report_name, report.records())
        setting = cfg["setting"] or tag
        (ctx.run / table_name).write_text(format_table({setting: report}), encoding="utf-8")
        return f"scored {len(scores)} items, {len(unscored)} unscored"

    params = {"kind": args.kind, "setting": tag, "evaluation": cfg, "nli": use_nli}
    return Stage(f"evaluate:{args.kind}:{tag}", inputs, params, [report_name, table_name], run)


def stage_train_ranker(ctx: Context) -> Stage:
    cfg = ctx.config.section("ranker")
    data = ctx.config.path("ranker", "training_data")
    target = ctx.config.path("retrieval", "ranker_model") or ctx.run / "ranker.bin"
    try:
        out_name = str(target.relative_to(ctx.run.root))
    except ValueError:
        out_name = None

    def run() -> str:
        samples = load_training_jsonl(_require(data, "ranker training data"))
        hyper = Hyper(cfg["d"], cfg["heads"], cfg["layers"], cfg["mlp_hidden"])
        tc = TrainConfig(cfg["learning_rate"], cfg["epochs"], cfg["batch_size"], ctx.seed, cfg["negative_ratio"])
        model, trace = train(samples, tc, hyper)
        target.parent.mkdir(parents=True, exist_ok=True)
        model.save(target)
        (ctx.run / "ranker_loss.json").write_text(json.dumps(trace) + "\n", encoding="utf-8")
        return f"trained on {len(samples)} pairs; final loss {trace[-1]:.4f}; model digest {model.digest()[:12]}"

    outputs = ["ranker_loss.json"] + ([out_name] if out_name else [])
    return Stage("train-ranker", {"training_data": data} if data else {}, {"ranker": cfg}, outputs, run)


def stage_audit(ctx: Context) -> Stage:
    args = ctx.args
    rate = ctx.config.section("audit")["rate"]
    src = _samples_path(ctx)
    out = f"audit_{args.kind}.json"

    def run() -> str:
        manifest = audit_sample(load_samples(_require(src, "benchmark samples")), rate, ctx.seed)
        manifest.save(ctx.run / out)
        counts = ", ".join(f"{lvl.value}={n}" for lvl, n in manifest.per_level_counts().items())
        return f"{len(manifest.sampled_ids)} samples selected for audit ({counts})"

    return Stage(f"audit:{args.kind}", {"samples": src}, {"rate": rate}, [out], run)


STAGES: dict[str, Callable[[Context], Stage]] = {
    "sample-entities": stage_sample_entities,
    "fetch-triples": stage_fetch_triples,
    "generate": stage_generate,
    "retrieve": stage_retrieve,
    "answer": stage_answer,
    "evaluate": stage_evaluate,
    "train-ranker": stage_train_ranker,
    "audit": stage_audit,
}


def execute(ctx: Context, stage: Stage, force: bool = False) -> str:
    digests = {name: file_digest(p) for name, p in stage.inputs.items() if p is not None and p.exists()}
    if ctx.gateway.mode == "replay" and ctx.gateway.cassette.path is not None and ctx.gateway.cassette.path.exists():
        digests["cassette"] = file_digest(ctx.gateway.cassette.path)
    manifest = RunManifest(
        subcommand=ctx.args.command,
        stage=stage.name,
        config_digest=ctx.config.digest,
        input_digests=digests,
        seed=ctx.seed,
        mode=ctx.gateway.mode,
        params=json.loads(dumps(stage.params)),
    )
    if not force and ctx.run.up_to_date(manifest, stage.outputs):
        return f"{stage.name}: up to date"
    manifest.started = _now()
    summary = stage.run()
    manifest.finished = _now()
    manifest.output_digests = {name: file_digest(ctx.run / name) for name in stage.outputs}
    ctx.run.save_manifest(manifest)
    return f"{stage.name}: {summary}"


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _add_setting_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=["qa", "conv"], default="qa")
    p.add_argument("--knowledge", choices=list(retrieval.MODES), default=None)
    p.add_argument("--ranker", choices=["llm", "amr"], default=None)
    p.add_argument("--oracle-entities", action="store_true", default=None, help="use the sample's gold entity instead of tagging")
    p.add_argument("--samples", help="benchmark JSONL to use instead of the run directory's")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailkg", description="Long-tail knowledge benchmark pipeline.")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--mode", choices=["record", "replay", "live"], help="gateway mode")
    parser.add_argument("--run-dir", help="override the configured run directory")
    parser.add_argument("--force", action="store_true", help="rerun even if the stage is up to date")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("sample-entities", help="page-view popularity and per-level sampling")
    sub.add_parser("fetch-triples", help="retrieve and filter KG triples for sampled entities")
    g = sub.add_parser("generate", help="generate QA or dialogue samples")
    g.add_argument("--kind", choices=["qa", "conv"], required=True)
    _add_setting_flags(sub.add_parser("retrieve", help="build knowledge bundles"))
    a = sub.add_parser("answer", help="answer with the configured chat model")
    _add_setting_flags(a)
    a.add_argument("--temperature", type=float)
    a.add_argument("--max-new-tokens", type=int)
    _add_setting_flags(sub.add_parser("evaluate", help="score predictions"))
    sub.add_parser("train-ranker", help="train the AMR relation ranker")
    au = sub.add_parser("audit", help="select samples for manual audit or score verdicts")
    au.add_argument("--kind", choices=["qa", "conv"], default="qa")
    au.add_argument("--samples")
    au.add_argument("--verdicts", help="filled audit manifest; prints error rates instead of sampling")
    c = sub.add_parser("check-samples", help="validate a benchmark JSONL file")
    c.add_argument("path")
    return parser


def _fill_setting_defaults(args: argparse.Namespace, config: Config) -> None:
    cfg = config.section("retrieval")
    if getattr(args, "knowledge", "unset") is None:
        args.knowledge = cfg["knowledge"]
    if getattr(args, "ranker", "unset") is None:
        args.ranker = cfg["ranker"]
    if getattr(args, "oracle_entities", "unset") is None:
        args.oracle_entities = cfg["oracle_entities"]


def _audit_rates(path: str) -> str:
    rates = error_rates(AuditManifest.load(path))
    return (
        f"audit: n={rates.n} errors per annotator={list(rates.errors_per_annotator)} "
        f"mean error rate={rates.mean_error_rate:.2%} union error rate={rates.union_error_rate:.2%}"
    )


def main(
    argv: Optional[Sequence[str]] = None,
    transport: Optional[Transport] = None,
    environ: Optional[Mapping[str, str]] = None,
    sleep: Optional[Callable[[float], None]] = None,
) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "check-samples":
            problems = check_samples_file(args.path)
            for p in problems:
                print(p)
            print(f"check-samples: {'ok' if not problems else f'{len(problems)} problem(s)'}")
            return 1 if problems else 0
        if args.command == "audit" and args.verdicts:
            print(_audit_rates(args.verdicts))
            return 0

        config = load_config(args.config)
        _fill_setting_defaults(args, config)
        run_root = Path(args.run_dir) if args.run_dir else config.path("run_dir")
        run = RunDir(run_root)
        seed = config["seed"] if args.seed is None else args.seed
        mode = args.mode or config["mode"]
        gw_kwargs: dict[str, Any] = {"transport": transport, "environ": environ}
        if sleep is not None:
            gw_kwargs["sleep"] = sleep
        gateway = Gateway(mode, config.path("cassette"), **gw_kwargs)
        ctx = Context(args, config, run, gateway, seed)
        lock = filelock.FileLock(str(run_root / LOCK_FILE), timeout=0)
        try:
            with lock:
                print(execute(ctx, STAGES[args.command](ctx), force=args.force))
        except filelock.Timeout:
            raise FatalError(f"run directory {run_root} is locked by another command")
        return 0
    except (FatalError, TailKGError, OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
