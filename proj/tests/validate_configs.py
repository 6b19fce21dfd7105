"""Validate every bundled config against configs/schema.json."""
import json
import pathlib
import sys

try:
    import jsonschema
except ImportError:
    print("jsonschema not installed; skipping")
    sys.exit(77)

root = pathlib.Path(sys.argv[1])
schema = json.loads((root / "schema.json").read_text())
validator = jsonschema.Draft202012Validator(schema)
bad = 0
for path in sorted(root.glob("*.json")):
    if path.name == "schema.json":
        continue
    errors = list(validator.iter_errors(json.loads(path.read_text())))
    for e in errors:
        print(f"{path.name}: {'/'.join(map(str, e.path))}: {e.message}")
    bad += bool(errors)
    print(f"{path.name}: {'ok' if not errors else 'invalid'}")
sys.exit(1 if bad else 0)
