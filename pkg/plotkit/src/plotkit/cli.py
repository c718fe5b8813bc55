"""plotkit command line: render figures from JSON specs."""

import argparse
import json
import sys

from .render import FigureSpec, SchemaError, render


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="plotkit")
    sub = ap.add_subparsers(dest="command", required=True)
    p_r = sub.add_parser("render")
    p_r.add_argument("--spec", required=True, help="figure spec JSON")
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec.from_json(args.spec)
        info = render(spec)
        print(json.dumps(info))
        return 0
    except SchemaError as exc:
        print(json.dumps({"error": "schema", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
