"""CSV/JSON writers for step logs, tables and run summaries."""
import json

STEP_LOG_HEADER = "step,tau,mass_in,mass_out,leakage"


def write_step_log(path, reports):
    with open(path, "w") as fh:
        fh.write(STEP_LOG_HEADER + "\n")
        for r in reports:
            fh.write(f"{r.step},{r.tau!r},{r.mass_in!r},{r.mass_out!r},{r.leakage_this_step!r}\n")


def write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
