#!/usr/bin/env python3
"""
FinRay Tactile Lab - synthetic tactile images and learners for a Fin Ray finger

Run `python finray.py <command> --help` for the available commands.
"""

import sys
from pathlib import Path

SRC_DIR = Path(__file__).resolve().parent / "src"


def main():
    sys.path.insert(0, str(SRC_DIR))

    try:
        from main import run
    except ImportError as e:
        missing = getattr(e, "name", None) or str(e)
        print(f"finray: cannot start, missing module {missing}", file=sys.stderr)
        print("Install the requirements with: pip install -r requirements.txt", file=sys.stderr)
        sys.exit(1)

    try:
        code = run()
    except Exception as e:
        print(f"finray: unexpected {type(e).__name__}: {e}", file=sys.stderr)
        code = 1
    sys.exit(code)


if __name__ == '__main__':
    main()
