"""Command-line entry point: audit, optimize, evaluate, and kb verbs.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import AppConfig, ConfigError, load_config
from .evaluator import ContractMatches, LLMJudge, SimpleJudge, pair_findings, summarize
from .gateway import CompletionRequest, Gateway, HttpProvider, MockProvider, cosine
from .kb import ChunkPolicy, KnowledgeChunk, RetrievalQuery, VectorIndex, chunk_document
from .model import AuditReport, ContractInput, GroundTruthFinding
from .optimizer import Instruction, evolve, final_select
from .report import render_report
from .scoring import ScoringConfig, TaskSample, combined_score
from .static_ingest import parse_static_report_file, to_hints
from .workflow import WorkflowEngine

log = logging.getLogger(__name__)


def build_gateway(cfg: AppConfig) -> Gateway:
    if cfg.provider.kind == "mock":
        if cfg.provider.script_path:
            provider = MockProvider.from_script(cfg.provider.script_path)
        else:
            provider = MockProvider(embedding_dim=cfg.provider.embedding_dim)
    else:
        provider = HttpProvider(
            model_id=cfg.provider.model_id,
            endpoint=cfg.provider.endpoint,
            api_key_env=cfg.provider.api_key_env,
        )
    return Gateway(provider, cache_dir=cfg.cache_dir)


# -- audit -------------------------------------------------------------------
def cmd_audit(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    gateway = build_gateway(cfg)
    source = Path(args.contract).read_text()
    contract = ContractInput(
        contract_id=Path(args.contract).stem,
        source_code=source,
        context_docs=[Path(p).read_text() for p in args.context or []],
        static_report_path=args.static,
    )
    hints = None
    if args.static:
        cfg.workflow.use_static = True
        parsed = parse_static_report_file(args.static)
        hints = to_hints(parsed.findings)
        if parsed.warnings:
            log.warning("static report: %d malformed entries skipped", parsed.warnings)
    kb_index = None
    if args.rag:
        cfg.workflow.use_rag = True
        if not cfg.kb_index_path or not Path(cfg.kb_index_path).exists():
            raise ConfigError("--rag requires kb_index_path pointing at an existing index")
        kb_index = VectorIndex.load(cfg.kb_index_path, gateway)
    engine = WorkflowEngine(gateway, cfg.workflow, kb_index=kb_index)
    out_dir = Path(cfg.output_dir)
    report = engine.run_audit(contract, hints=hints, out_dir=out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.md").write_text(render_report(report))
    print(f"audit complete: {len(report.findings)} findings, {engine.llm_steps} LLM steps")
    print(f"wrote {out_dir / 'report.json'}")
    return 0


# -- optimize ----------------------------------------------------------------
def _load_samples(directory: str | Path) -> list[TaskSample]:
    samples = []
    for path in sorted(Path(directory).glob("*.json")):
        data = json.loads(path.read_text())
        samples.append(TaskSample(contract=data["contract"], expected=data["expected"]))
    if not samples:
        raise ConfigError(f"no .json task samples in {directory}")
    return samples


MUTATOR_SYSTEM = (
    "You are an expert prompt engineer. Rewrite the given instruction through "
    "paraphrasing, keyword substitution, or structural edits while preserving "
    "its intent. Reply with the rewritten instruction only."
)


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    gateway = build_gateway(cfg)
    train = _load_samples(args.train)
    val = _load_samples(args.val)
    seeds = [s.strip() for s in Path(args.seeds).read_text().splitlines() if s.strip()]
    if not seeds:
        raise ConfigError(f"seeds file {args.seeds} is empty")

    scoring_cfg = ScoringConfig(
        w_exec=cfg.optimizer.w_exec,
        w_log=cfg.optimizer.w_log,
        w_cov=cfg.optimizer.w_cov,
        w_det=cfg.optimizer.w_det,
        exec_scale=1.0,  # normalized mode for optimization
        judge_model=cfg.provider.model_id,
    )

    def scorer(text: str, sample: TaskSample) -> float:
        return combined_score(text, sample, gateway, scoring_cfg, model_id=cfg.provider.model_id).combined

    def mutator(parent: str, tau: float, rng: random.Random) -> str:
        req = CompletionRequest(
            model_id=cfg.provider.model_id,
            system_prompt=MUTATOR_SYSTEM,
            # Salt keeps repeated mutations of one parent distinct under caching.
            user_prompt=f"[variant {rng.randrange(1 << 30)}]\n{parent}",
            temperature=tau,
        )
        return gateway.complete(req).text.strip()

    def sim(a: str, b: str) -> float:
        if a == b:
            return 1.0
        va, vb = gateway.embed([a, b])
        return cosine(va, vb)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(t: int, population: list[Instruction], stats) -> None:
        payload = [
            {
                "id": i.id,
                "text": i.text,
                "smoothed_fitness": i.smoothed_fitness,
                "lineage": i.lineage,
            }
            for i in population
        ]
        (out_dir / f"population_gen{t:03d}.json").write_text(json.dumps(payload, indent=2))

    population, history = evolve(
        train, cfg.optimizer, scorer, mutator, sim, seeds=seeds, on_generation=snapshot
    )
    best = final_select(population, val, cfg.optimizer.lam, scorer)

    (out_dir / "rho_star.txt").write_text(best.text + "\n")
    with (out_dir / "history.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness", "mean_fitness", "diversity", "batch_size", "temperature"])
        for h in history:
            writer.writerow(
                [h.generation, h.best_fitness, h.mean_fitness, h.diversity, h.batch_size, h.temperature]
            )
    from .plots import plot_history

    if history:
        plot_history(history, out_dir / "history.png")
    print(f"optimization complete: {len(history)} generations, selected {best.id}")
    print(f"wrote {out_dir / 'rho_star.txt'}")
    return 0


# -- evaluate ----------------------------------------------------------------
def _load_reports(path: Path) -> list[AuditReport]:
    data = json.loads(path.read_text())
    if isinstance(data, list):
        return [AuditReport.from_dict(d) for d in data]
    return [AuditReport.from_dict(data)]


def _load_gold(path: Path) -> dict[str, list[GroundTruthFinding]]:
    data = json.loads(path.read_text())
    # {contract_id: [finding, ...]} or a flat list for a single contract.
    if isinstance(data, list):
        return {"": [GroundTruthFinding.from_dict(d) for d in data]}
    return {
        cid: [GroundTruthFinding.from_dict(d) for d in items] for cid, items in data.items()
    }


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    reports = _load_reports(Path(args.report))
    gold_map = _load_gold(Path(args.gold))
    if args.judge == "llm":
        judge = LLMJudge(build_gateway(cfg), model_id=cfg.provider.model_id)
    else:
        judge = SimpleJudge()
    contracts = []
    for report in reports:
        gold = gold_map.get(report.contract_id, gold_map.get("", []))
        matches = pair_findings(report.findings, gold, judge)
        contracts.append(
            ContractMatches(
                contract_id=report.contract_id,
                matches=matches,
                gold_count=len(gold),
                produced_count=len(report.findings),
            )
        )
    summary = summarize(contracts, top_ns=(1, 5), strict=args.strict)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(summary.to_dict(), indent=2))
    avg_outputs = sum(c.produced_count for c in contracts) / len(contracts)
    with (out_dir / "eval.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["top-1", "top-5", "top-max", "MRR", "avg_outputs"])
        writer.writerow(
            [summary.top_n["1"], summary.top_n["5"], summary.top_n["max"], summary.mrr, avg_outputs]
        )
    from .plots import plot_eval

    plot_eval(summary, out_dir / "eval.png")
    print(
        f"evaluated {len(contracts)} contract(s): "
        f"top-max {summary.top_n['max']:.3f}, MRR {summary.mrr:.3f}, MAP {summary.map:.3f}"
    )
    print(f"wrote {out_dir / 'eval.json'} and {out_dir / 'eval.csv'}")
    return 0


# -- kb ----------------------------------------------------------------------
def cmd_kb_ingest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    gateway = build_gateway(cfg)
    index_path = Path(args.index or cfg.kb_index_path or "kb_index.jsonl")
    if index_path.exists():
        index = VectorIndex.load(index_path, gateway)
    else:
        index = VectorIndex(gateway)
    policy = ChunkPolicy(target_tokens=args.chunk_tokens, overlap_fraction=args.overlap)
    total = 0
    for doc_path in sorted(Path(args.docs).glob("*.txt")) + sorted(Path(args.docs).glob("*.md")):
        meta_path = doc_path.with_suffix(doc_path.suffix + ".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        text = doc_path.read_text()
        chunks = []
        for n, (content, _) in enumerate(chunk_document(text, policy)):
            chunks.append(
                KnowledgeChunk(
                    chunk_id=f"{doc_path.stem}-{n:04d}",
                    document_id=doc_path.stem,
                    content=content,
                    source_url=meta.get("source_url", str(doc_path)),
                    source_type=meta.get("source_type", "Guideline"),
                    title=meta.get("title", doc_path.stem),
                    publication_date=meta.get("publication_date", ""),
                    last_accessed_date=meta.get("last_accessed_date", ""),
                    vulnerability_tags=meta.get("vulnerability_tags", []),
                    platform_tags=meta.get("platform_tags", ["ethereum"]),
                    severity_keywords=meta.get("severity_keywords", []),
                    summary=meta.get("summary", ""),
                )
            )
        total += index.ingest(chunks)
    index.save(index_path)
    print(f"ingested {total} new chunk(s); index size {len(index)} at {index_path}")
    return 0


def cmd_kb_query(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    gateway = build_gateway(cfg)
    index_path = Path(args.index or cfg.kb_index_path or "kb_index.jsonl")
    if not index_path.exists():
        raise ConfigError(f"index not found: {index_path}")
    index = VectorIndex.load(index_path, gateway)
    results = index.retrieve(RetrievalQuery(text=args.text, k=args.k))
    payload = [
        {"chunk_id": c.chunk_id, "title": c.title, "score": score, "content": c.content}
        for c, score in results
    ]
    print(json.dumps(payload, indent=2))
    return 0


# -- dispatch ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scaudit", description="Staged LLM smart-contract audit pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_audit = sub.add_parser("audit", help="run a full audit of one contract")
    p_audit.add_argument("contract", help="path to the contract source file")
    p_audit.add_argument("--config", required=True)
    p_audit.add_argument("--static", help="static-analyzer JSON report to ingest as hints")
    p_audit.add_argument("--rag", action="store_true", help="enable retrieval-augmented calibration")
    p_audit.add_argument("--context", nargs="*", help="context document files")
    p_audit.set_defaults(func=cmd_audit)

    p_opt = sub.add_parser("optimize", help="evolve audit instructions")
    p_opt.add_argument("train", help="directory of training task samples (*.json)")
    p_opt.add_argument("val", help="directory of validation task samples (*.json)")
    p_opt.add_argument("--seeds", required=True, help="file with one seed instruction per line")
    p_opt.add_argument("--config", required=True)
    p_opt.set_defaults(func=cmd_optimize)

    p_eval = sub.add_parser("evaluate", help="score a report against ground truth")
    p_eval.add_argument("report", help="report.json (single report or list)")
    p_eval.add_argument("gold", help="ground truth JSON")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--judge", choices=("simple", "llm"), default="simple")
    p_eval.add_argument("--strict", action="store_true", help="count only Exact matches as TP")
    p_eval.set_defaults(func=cmd_evaluate)

    p_kb = sub.add_parser("kb", help="knowledge-base operations")
    kb_sub = p_kb.add_subparsers(dest="kb_verb", required=True)
    p_ing = kb_sub.add_parser("ingest", help="chunk, embed and index documents")
    p_ing.add_argument("docs", help="directory of *.txt/*.md documents with .meta.json sidecars")
    p_ing.add_argument("--config", required=True)
    p_ing.add_argument("--index", help="index file (defaults to config kb_index_path)")
    p_ing.add_argument("--chunk-tokens", type=int, default=384)
    p_ing.add_argument("--overlap", type=float, default=0.15)
    p_ing.set_defaults(func=cmd_kb_ingest)
    p_query = kb_sub.add_parser("query", help="retrieve top-k chunks for a query")
    p_query.add_argument("text")
    p_query.add_argument("--config", required=True)
    p_query.add_argument("--index")
    p_query.add_argument("-k", type=int, default=5)
    p_query.set_defaults(func=cmd_kb_query)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
