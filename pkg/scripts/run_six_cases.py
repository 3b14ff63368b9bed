#!/usr/bin/env python3
"""Short ladder over all six scheduling policies (about half a minute).

configs/six_cases.json pins one instance per policy; each case's report
lands in the config's output directory.  Extra arguments are forwarded,
e.g. --seed 11 --output-dir /tmp/six.
"""

import sys
from pathlib import Path

from pss_lab.cli import main as cli_main


def main(argv=None):
    args = list(sys.argv[1:] if argv is None else argv)
    root = Path(__file__).resolve().parents[1]
    return cli_main(["experiment", str(root / "configs" / "six_cases.json"), *args])


if __name__ == "__main__":
    sys.exit(main())
