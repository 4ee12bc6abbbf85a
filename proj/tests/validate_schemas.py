"""Validates the shipped configs and a freshly generated report against the JSON schemas."""

import json
import pathlib
import shutil
import subprocess
import sys

try:
    import jsonschema
except ImportError:
    print("jsonschema is not installed; skipping")
    sys.exit(0)

cli, root, scratch = sys.argv[1], pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
shutil.rmtree(scratch, ignore_errors=True)
scratch.mkdir(parents=True)

config_schema = json.loads((root / "schemas" / "experiment.schema.json").read_text())
report_schema = json.loads((root / "schemas" / "report.schema.json").read_text())
failures = 0


def check(schema, doc, what):
    global failures
    errors = list(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    for e in errors:
        print(f"{what}: {e.message} at {list(e.absolute_path)}")
    failures += bool(errors)
    print(f"{what}: {'ok' if not errors else 'INVALID'}")


for path in sorted((root / "configs").glob("*.json")):
    check(config_schema, json.loads(path.read_text()), path.name)

tiny = {
    "kind": "patch-pd",
    "seed": 3,
    "dataset": {"generator": "glyphs", "templates": [0, 1], "per_class": 40, "height": 12, "width": 12,
                "spurious": {"kind": "patch", "patch_size": 3}},
    "model": "mlp-2",
    "training": {"epochs": 1, "batch_size": 16},
    "probe": {"bank_size": 30, "k": 5},
}
check(config_schema, tiny, "generated config")
cfg = scratch / "tiny.json"
cfg.write_text(json.dumps(tiny))
out = scratch / "out"
subprocess.run([cli, "run", "--config", str(cfg), "--out", str(out)], check=True)
check(report_schema, json.loads((out / "report.json").read_text()), "generated report")
manifest = json.loads((out / "manifest.json").read_text())
missing = [a["path"] for a in manifest["artifacts"] if not (out / a["path"]).exists()]
if missing:
    print("manifest lists missing artifacts:", missing)
    failures += 1
sys.exit(1 if failures else 0)
