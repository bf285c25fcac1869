import os

# use pip install python-dotenv
from dotenv import load_dotenv

# loads the envars defined in the local .env file
# so they can be accessed using os.getenv(envar, [default_value])
load_dotenv()

# Default root directory for experiment outputs
# (results.csv, report_<seed>.json, signals_<seed>.csv, fixtures.json).
# The run_experiments.py --out flag overrides it.
NICA_OUTPUT_ROOT = os.getenv("NICA_OUTPUT_ROOT", "results")

# Directory holding calibrated threshold fixtures consumed by the
# acceptance tests, e.g. tests/fixtures/tcl_pipeline/fixtures.json
NICA_FIXTURES_DIR = os.getenv("NICA_FIXTURES_DIR", os.path.join("tests", "fixtures"))

# Set to 1 to run the long desk-scale acceptance tests
RUN_SLOW_TESTS = os.getenv("NICA_RUN_SLOW_TESTS", "0") == "1"
