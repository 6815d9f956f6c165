"""Command-line driver.

Subcommands: ``analyze`` derives stream labels and derivation traces,
``plan`` adds the synthesized coordination plan, ``simulate`` runs the
configured fixtures under no coordination and under the plan, and
``check`` does all of it while asserting that observed anomalies stay
inside both the static labels and the plan's guarantees.

By default everything runs in-process.  With ``--server URL`` the CLI is
a thin client of a running flowguard service and posts the configuration
there instead.
"""

from __future__ import annotations

import argparse
import json
import sys

from .reporting import RUNNERS
from .sim.engine import DEFAULT_EXHAUSTIVE_BOUND, DEFAULT_SAMPLES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowguard",
        description=(
            "Analyze annotated dataflow configurations for consistency "
            "anomalies, synthesize coordination, and verify by simulation."
        ),
    )
    parser.add_argument(
        "--server",
        metavar="URL",
        help="run against a flowguard service instead of in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("config", help="path to the configuration file")
        p.add_argument(
            "--format",
            choices=("text", "json"),
            default="text",
            help="report format (default text)",
        )

    def sim_flags(p: argparse.ArgumentParser):
        p.add_argument(
            "--fixture",
            help="run a single named fixture (default: all declared fixtures)",
        )
        p.add_argument(
            "--exhaustive-bound",
            type=int,
            default=DEFAULT_EXHAUSTIVE_BOUND,
            metavar="N",
            help="max deliverable events for exhaustive interleaving "
            f"(default {DEFAULT_EXHAUSTIVE_BOUND}; larger fixtures are sampled)",
        )
        p.add_argument(
            "--samples",
            type=int,
            default=DEFAULT_SAMPLES,
            metavar="N",
            help=f"schedules to sample above the bound (default {DEFAULT_SAMPLES})",
        )
        p.add_argument(
            "--seed", type=int, default=0, metavar="S", help="sampling seed"
        )

    common(sub.add_parser("analyze", help="derive stream labels and traces"))
    common(sub.add_parser("plan", help="analyze and synthesize coordination"))
    for name, help_text in (
        ("simulate", "run fixtures raw and under the synthesized plan"),
        ("check", "analyze, plan, simulate, and assert oracle agreement"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        sim_flags(p)
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _run_remote(server: str, args: argparse.Namespace, text: str) -> dict:
    import httpx

    payload: dict = {"config": text}
    if args.command in ("simulate", "check"):
        payload.update(
            {
                "fixture": args.fixture,
                "exhaustive_bound": args.exhaustive_bound,
                "samples": args.samples,
                "seed": args.seed,
            }
        )
    response = httpx.post(
        server.rstrip("/") + f"/v1/{args.command}", json=payload, timeout=300.0
    )
    response.raise_for_status()
    return response.json()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        with open(args.config, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1

    if args.server:
        body = _run_remote(args.server, args, text)
        if args.format == "json":
            print(json.dumps(body["report"], indent=2))
        else:
            print(body["text"], end="")
        return int(body["exit_status"])

    runner = RUNNERS[args.command]
    if args.command in ("simulate", "check"):
        report = runner(
            text,
            fixture=args.fixture,
            bound=args.exhaustive_bound,
            samples=args.samples,
            seed=args.seed,
        )
    else:
        report = runner(text)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.render_text(), end="")
    return report.exit_status


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
