"""Command-line entry point.

Stages write into a working directory and read only what earlier stages
produced; `serve` exposes the trained bundle over HTTP and `chat` is a thin
terminal client for a running service.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig
from .errors import ConvKgqaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convkgqa",
        description="Conversational question answering over a knowledge graph.")
    parser.add_argument("--config", type=Path, default=None,
                        help="config file, JSON or flat key=value"
                             " (defaults are full-scale settings)")
    parser.add_argument("--workdir", "--out", type=Path, default=Path("artifacts"),
                        dest="workdir",
                        help="artifact directory (default: ./artifacts)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth",
                             help="generate the synthetic world and corpus splits")
    p_synth.add_argument("--n", type=int, default=None,
                         help="override the number of conversations")
    sub.add_parser("train-complex", help="train the KG embedding tables")
    sub.add_parser("train-teacher",
                   help="RL-train the teacher encoder and policy, fit the"
                        " soft-reward projection")
    sub.add_parser("pretrain-selector", help="train the topic classifier")
    sub.add_parser("train-student",
                   help="distill the student encoder and continue policy"
                        " training with the soft reward")

    p_eval = sub.add_parser("evaluate", help="evaluate a corpus split")
    p_eval.add_argument("--split", default=None,
                        choices=["train", "valid", "test"])
    p_eval.add_argument("--encoder", default=None,
                        choices=["student", "teacher"], dest="encoder_role")
    p_eval.add_argument("--ref-mode", default=None,
                        choices=["dataset", "dataset_human", "template", "none"])
    p_eval.add_argument("--teacher-force", action="store_true", default=None,
                        help="feed gold answers into topic selection")
    p_eval.add_argument("--min-p1", type=float, default=None,
                        help="exit nonzero if P@1 falls below this")
    p_eval.add_argument("--min-hit5", type=float, default=None,
                        help="exit nonzero if Hit@5 falls below this")

    p_ablate = sub.add_parser("ablate", help="train and evaluate ablation variants")
    p_ablate.add_argument("--variants", default="unique_edge_on,unique_edge_off",
                          help="comma-separated variant names")

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference check of every layer and"
                                 " the policy loss")
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    p_serve = sub.add_parser("serve", help="run the session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--ref-mode", default="template",
                         choices=["template", "none"])
    p_serve.add_argument("--session-ttl", type=float, default=3600.0)

    p_chat = sub.add_parser("chat", help="terminal chat client for a running service")
    p_chat.add_argument("--url", default="http://127.0.0.1:8000")
    p_chat.add_argument("--topic", default=None,
                        help="topic entity key to open the session with")
    return parser


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except ConvKgqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def run_command(args) -> int:
    from . import pipeline as pl

    config = load_config(args)
    workdir = args.workdir

    if args.command == "synth":
        if args.n is not None:
            config.synth.n_conversations = args.n
        summary = pl.run_synth(config, workdir)
        print(json.dumps(summary, indent=1, sort_keys=True))
        return 0
    if args.command == "train-complex":
        summary = pl.run_train_complex(config, workdir)
        print(json.dumps(summary, indent=1, sort_keys=True, default=float))
        return 0
    if args.command == "train-teacher":
        summary = pl.run_train_teacher(config, workdir)
        print(json.dumps(summary, indent=1, sort_keys=True, default=float))
        return 0
    if args.command == "pretrain-selector":
        summary = pl.run_pretrain_selector(config, workdir)
        print(json.dumps(summary, indent=1, sort_keys=True, default=float))
        return 0
    if args.command == "train-student":
        summary = pl.run_train_student(config, workdir)
        print(json.dumps(summary, indent=1, sort_keys=True, default=float))
        return 0
    if args.command == "evaluate":
        if args.min_p1 is not None:
            config.eval.min_p_at_1 = args.min_p1
        if args.min_hit5 is not None:
            config.eval.min_hit_at_5 = args.min_hit5
        report, exit_code = pl.run_evaluate(
            config, workdir, split=args.split,
            encoder_role=args.encoder_role, ref_mode=args.ref_mode,
            teacher_force=args.teacher_force)
        print(report.text_table())
        if exit_code:
            print("threshold check failed", file=sys.stderr)
        return exit_code
    if args.command == "ablate":
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        payload = pl.run_ablate(config, workdir, variants)
        from .evaluate import ablation_table

        print(ablation_table(payload["rows"]))
        return 0
    if args.command == "gradcheck":
        report = pl.run_gradcheck(tolerance=args.tolerance, seed=config.seed)
        for name, err in sorted(report["per_check"].items()):
            print(f"{name:<14} max rel err {err:.3e}")
        status = "ok" if report["passed"] else "FAILED"
        print(f"overall {report['max_rel_error']:.3e}"
              f" (tolerance {report['tolerance']:.0e}) {status}"
              f" in {report['wall_s']:.1f}s")
        return 0 if report["passed"] else 1
    if args.command == "serve":
        return _serve(config, workdir, args)
    if args.command == "chat":
        return _chat(args)
    raise AssertionError(f"unhandled command {args.command}")


def _serve(config: PipelineConfig, workdir, args) -> int:
    import uvicorn

    from .bundle import load_bundle
    from .service import create_app

    bundle = load_bundle(workdir, config,
                         need=("complex", "teacher", "selector", "student",
                               "policy", "projection"))
    app = create_app(bundle, ref_mode=args.ref_mode,
                     session_ttl_s=args.session_ttl)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _chat(args) -> int:
    import httpx

    base = args.url.rstrip("/")
    client = httpx.Client(base_url=base, timeout=60.0)
    try:
        client.get("/health").raise_for_status()
    except httpx.HTTPError:
        print(f"error: no service at {base}; start one with"
              f" `convkgqa serve`", file=sys.stderr)
        return 2

    session_id = None

    def new_session(key: str) -> str | None:
        response = client.post("/sessions", json={"topic_entity_key": key})
        if response.status_code != 200:
            detail = response.json().get("detail", {})
            print(f"cannot start session: {detail.get('message')}")
            if detail.get("suggestions"):
                print("did you mean:", ", ".join(detail["suggestions"]))
            return None
        doc = response.json()
        print(f"session {doc['session_id'][:8]} pinned to {doc['topic_entity']}")
        return doc["session_id"]

    if args.topic:
        session_id = new_session(args.topic)
        if session_id is None:
            return 2
    else:
        print("no topic given; use `/new <entity-key>` to open a session")
    print("commands: /new <entity-key>, /quit")

    while True:
        try:
            line = input("you> ").strip()
        except (EOFError, KeyboardInterrupt):
            print()
            return 0
        if not line:
            continue
        if line in ("/quit", "/exit"):
            return 0
        if line.startswith("/new"):
            parts = line.split(maxsplit=1)
            if len(parts) == 2:
                session_id = new_session(parts[1].strip())
            else:
                print("usage: /new <entity-key>")
            continue
        if session_id is None:
            print("open a session first with /new <entity-key>")
            continue
        response = client.post(f"/sessions/{session_id}/ask",
                               json={"question": line})
        if response.status_code != 200:
            print(f"service error {response.status_code}: {response.text}")
            continue
        doc = response.json()
        print(f"answer: {doc['answer']}   (topic used: {doc['topic_used']})")
        for candidate in doc["top_k"][:8]:
            print(f"  {candidate['score']:8.4f}  {candidate['entity']}"
                  f"  [{candidate['source']}]")
        if doc["trace"]:
            hops = " -> ".join(f"{step['relation']}:{step['entity']}"
                               for step in doc["trace"])
            print(f"  walk: {hops}")


if __name__ == "__main__":
    sys.exit(main())
