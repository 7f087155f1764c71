"""Run the twelve acceptance criteria and print one line each.

    python3 scripts/run_acceptance.py [fast|full] [criterion ...]

Exit status is 1 if any criterion fails.
"""

import sys
import warnings

from turbsim.criteria import run_all


def main(argv):
    level = argv[0] if argv else "full"
    include = [int(a) for a in argv[1:]] or None
    failed, done = 0, set()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for n in include or range(1, 13):
            if n in done:
                continue           # 4 and 5 come from one ensemble
            for r in run_all(level=level, include=[n]):
                print(f"{r.line()} [{r.seconds:.1f} s]", flush=True)
                failed += r.status == "fail"
                done.add(r.number)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
