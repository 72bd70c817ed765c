"""Command line: build a base model, adapt it on seed text, and serve
the fill-mask protocol.

Exit codes: 0 success, 1 runtime failure (unloadable model, bad corpus),
2 usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

import uvicorn

from .adapt import AdaptConfig, AdaptError, adapt_model
from .app import create_app
from .model import FillEngine, ModelError, build_base_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fillmask-service",
        description="Fill-mask HTTP service over a locally built masked LM.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="build a base model from a text corpus")
    p_init.add_argument("--corpus", required=True, help="one utterance per line")
    p_init.add_argument("--out", required=True, help="model output directory")
    p_init.add_argument("--hidden-size", type=int, default=64)
    p_init.add_argument("--layers", type=int, default=2)
    p_init.add_argument("--heads", type=int, default=2)
    p_init.add_argument("--seed", type=int, default=0)

    p_adapt = sub.add_parser("adapt", help="continue masked-LM training on seed text")
    p_adapt.add_argument("--model", required=True, help="base model directory")
    p_adapt.add_argument("--corpus", required=True, help="one utterance per line")
    p_adapt.add_argument("--out", required=True, help="adapted model directory")
    p_adapt.add_argument("--steps", type=int, default=30)
    p_adapt.add_argument("--mask-rate", type=float, default=0.15)
    p_adapt.add_argument("--lr", type=float, default=5e-3)
    p_adapt.add_argument("--batch-size", type=int, default=8)
    p_adapt.add_argument("--seed", type=int, default=0)

    p_serve = sub.add_parser("serve", help="serve the fill-mask protocol")
    p_serve.add_argument("--model", required=True, help="model directory")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8109)
    p_serve.add_argument("--batch-size", type=int, default=16)

    return parser


def cmd_init(args) -> int:
    out = build_base_model(
        args.corpus,
        args.out,
        hidden_size=args.hidden_size,
        layers=args.layers,
        heads=args.heads,
        seed=args.seed,
    )
    print(f"model: {out}")
    return 0


def cmd_adapt(args) -> int:
    config = AdaptConfig(
        steps=args.steps,
        mask_rate=args.mask_rate,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    log = adapt_model(args.model, args.corpus, args.out, config)
    if log.losses:
        print(f"loss: first {log.losses[0]:.4f} last {log.losses[-1]:.4f}")
    print(f"model: {log.out_dir}")
    return 0


def cmd_serve(args) -> int:
    # Load before binding so an unloadable model exits without ever
    # opening the port.
    engine = FillEngine.load(args.model)
    app = create_app(engine, batch_size=args.batch_size)
    print(f"serving {engine.model_id} on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"init": cmd_init, "adapt": cmd_adapt, "serve": cmd_serve}
    try:
        return handlers[args.command](args)
    except (ModelError, AdaptError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - last-resort guard
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
