"""Command line entry: plotkit <spec.file>."""

import argparse
import sys

from .figures import load_spec, render
from .schema import SchemaError


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="plotkit",
        description="render benchmark CSV outputs as figures")
    ap.add_argument("spec", help="YAML figure spec (one mapping or a "
                                 "'figures' list)")
    args = ap.parse_args(argv)
    try:
        specs = load_spec(args.spec)
        for spec in specs:
            print("wrote %s" % render(spec))
    except (SchemaError, ValueError, OSError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    return 0


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
