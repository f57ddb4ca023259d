"""Run the acceptance criteria and print one PASS/FAIL line each.

    python scripts/run_acceptance.py          # all nine
    python scripts/run_acceptance.py 1 2 5    # a subset
"""

import os
import runpy
import sys

if __name__ == "__main__":
    here = os.path.dirname(os.path.abspath(__file__))
    sys.argv[0] = os.path.join(here, "..", "tests", "test_acceptance.py")
    runpy.run_path(sys.argv[0], run_name="__main__")
