"""Validates a service transcript (JSON lines) against the wire schema."""
import json
import subprocess
import sys

import jsonschema


def main():
    schema_path, transcript_bin = sys.argv[1], sys.argv[2]
    with open(schema_path) as f:
        schema = json.load(f)
    jsonschema.Draft202012Validator.check_schema(schema)
    defs = schema["$defs"]
    validators = {}
    for name in ("Request", "ServerMessage"):
        sub = dict(schema, **{"$ref": f"#/$defs/{name}"})
        sub.pop("anyOf")
        validators[name] = jsonschema.Draft202012Validator(sub)
    out = subprocess.run([transcript_bin], check=True, capture_output=True, text=True).stdout
    seen = set()
    failures = 0
    for line in out.splitlines():
        entry = json.loads(line)
        if entry["dir"] == "bad_request":
            if validators["Request"].is_valid(entry["msg"]):
                print("schema accepts a request the server must reject:", entry["msg"]["type"])
                failures += 1
            continue
        kind = "Request" if entry["dir"] == "request" else "ServerMessage"
        errors = list(validators[kind].iter_errors(entry["msg"]))
        seen.add(entry["msg"]["type"])
        if errors:
            failures += 1
            print(f"{kind} failed: {entry['msg']['type']}: {errors[0].message[:300]}")
    expected = {"Error", "LedFrame", "MetricsFrame"} | set(defs["Response"]["properties"]["type"]["enum"])
    missing = expected - seen
    if missing:
        print("not exercised:", sorted(missing))
        failures += 1
    print(f"{len(out.splitlines())} messages checked, {failures} problems")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
