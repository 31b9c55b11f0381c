"""Run the bridge under uvicorn."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .hub import create_hub


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="motionweave model bridge")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8897)
    parser.add_argument(
        "--hub", default="procedural", choices=["procedural", "real"],
        help="procedural: deterministic stand-in; real: pretrained pipelines",
    )
    parser.add_argument("--model-dir", default=None, help="local weights for --hub real")
    args = parser.parse_args(argv)
    kwargs = {"model_dir": args.model_dir} if args.hub == "real" else {}
    app = create_app(create_hub(args.hub, **kwargs))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
