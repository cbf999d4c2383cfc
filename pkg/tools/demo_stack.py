"""One-process demo stack: stub archive + seeded fixtures + link API.

Prints a single machine-readable READY line, then serves until interrupted:

    READY {"api": "...", "archive": "...", "mrStudy": "...", ...}

The frontend end-to-end tests spawn this script and parse that line.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import tempfile
from pathlib import Path

from radpathlink.api import serve_api
from radpathlink.config import ServiceConfig
from radpathlink.dicomweb import serve_stub
from radpathlink.engine import EngineConfig

sys.path.insert(0, str(Path(__file__).parent))
from seed_demo import seed  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", help="workspace directory (default: temp)")
    parser.add_argument("--stub-port", type=int, default=0)
    parser.add_argument("--api-port", type=int, default=0)
    parser.add_argument("--static-dir", help="serve a built web client")
    args = parser.parse_args()

    root = Path(args.root) if args.root else Path(tempfile.mkdtemp(prefix="radpathlink-"))
    stub = serve_stub(root / "archive", ("127.0.0.1", args.stub_port))
    state_dir = root / "state"
    state_dir.mkdir(parents=True, exist_ok=True)
    info = seed(stub.url, run_link=True,
                manifest_store_path=str(state_dir / "manifests.jsonl"))

    api = serve_api(ServiceConfig(
        archive_endpoint=stub.url,
        manifest_store_path=str(state_dir / "manifests.jsonl"),
        bind_address=("127.0.0.1", args.api_port),
        engine=EngineConfig(synthetic_threshold=500),
    ), static_dir=args.static_dir)

    info["api"] = api.url
    print("READY " + json.dumps(info), flush=True)

    stop = {"flag": False}

    def handle(_sig, _frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, handle)
    signal.signal(signal.SIGINT, handle)
    try:
        while not stop["flag"]:
            signal.pause()
    finally:
        api.stop()
        stub.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
