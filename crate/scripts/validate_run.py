#!/usr/bin/env python3
"""Validate cqe run documents against schema/run.schema.json.

    python3 scripts/validate_run.py run.json [more.json ...]
"""
import json
import pathlib
import sys

import jsonschema

SCHEMA = pathlib.Path(__file__).resolve().parent.parent / "schema" / "run.schema.json"


def main(paths):
    schema = json.loads(SCHEMA.read_text())
    validator = jsonschema.Draft202012Validator(schema)
    bad = 0
    for p in paths:
        errors = sorted(validator.iter_errors(json.loads(pathlib.Path(p).read_text())), key=str)
        for e in errors:
            print(f"{p}: {e.json_path}: {e.message}", file=sys.stderr)
        bad += bool(errors)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
