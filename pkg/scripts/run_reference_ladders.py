#!/usr/bin/env python3
"""Run the two reference convergence ladders (takes a few minutes).

Both configs live in configs/: a server-switched instance under its
threshold policy and an all-exponential class-switched instance under T2.
Extra command-line arguments are forwarded to the experiment subcommand,
e.g. --seed 7; a --output-dir is suffixed per instance so the two runs
never overwrite each other's manifest.
"""

import sys
from pathlib import Path

from pss_lab.cli import main as cli_main


def main(argv=None):
    args = list(sys.argv[1:] if argv is None else argv)
    root = Path(__file__).resolve().parents[1]
    rc = 0
    for name in ("ss_reference", "cs_reference"):
        extra = list(args)
        if "--output-dir" in extra:
            i = extra.index("--output-dir")
            extra[i + 1] = str(Path(extra[i + 1]) / name)
        code = cli_main(["experiment", str(root / "configs" / f"{name}.json"), *extra])
        rc = rc or code
    return rc


if __name__ == "__main__":
    sys.exit(main())
