"""Turn the raw run files of a manifest into analysis tables."""

import json
from pathlib import Path

from abris.errors import StateError
from abris.harness.experiment import RunManifest

RECORD_FIELDS = ("iteration", "cumulative_calls", "rounds", "ess", "e_is_norm", "e_ref_norm", "flags", "elbo")


def _read_records(path):
    path = Path(path)
    if not path.exists():
        return []
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def reuse_trace(records):
    """Rows ``(i, j, beta_j^i)``: iteration ``i`` used the batch drawn at ``j`` with weight ``beta``."""
    rows = []
    tags, sizes = [], []
    for rec in records:
        if "batch_tags" in rec:
            tags, sizes = rec["batch_tags"], rec["batch_sizes"]
        total = sum(sizes)
        for tag, size in zip(tags, sizes):
            rows.append((rec["iteration"], tag, size / total))
    return rows


def export_records(manifest, fmt="tsv"):
    """Write per-iteration tables, reuse traces and a replication summary.

    Args:
        manifest (RunManifest or path): Completed or partial run.
        fmt (str): ``"tsv"`` or ``"jsonl"`` for the per-iteration tables.

    Returns:
        list[Path]: Written files.
    """
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    if fmt not in ("tsv", "jsonl"):
        raise StateError(f"unknown export format {fmt!r}")
    out = manifest.directory
    written = []
    summary_rows = []
    for entry in manifest.replications:
        r = entry["replication"]
        records = _read_records(out / entry["records"])
        iter_path = out / f"iterations_{r:03d}.{fmt}"
        try:
            with open(iter_path, "w") as fh:
                if fmt == "tsv":
                    fh.write("\t".join(RECORD_FIELDS) + "\n")
                    for rec in records:
                        fh.write("\t".join(_cell(rec.get(k)) for k in RECORD_FIELDS) + "\n")
                else:
                    for rec in records:
                        fh.write(json.dumps({k: rec.get(k) for k in RECORD_FIELDS}) + "\n")
            trace_path = out / f"reuse_trace_{r:03d}.tsv"
            with open(trace_path, "w") as fh:
                fh.write("iteration\tsource_iteration\tbeta\n")
                for i, j, beta in reuse_trace(records):
                    fh.write(f"{i}\t{j}\t{beta!r}\n")
        except OSError as err:
            raise StateError(f"cannot write export files in {out}: {err}") from err
        written += [iter_path, trace_path]
        s = entry.get("summary") or {}
        summary_rows.append(
            (r, entry["seed"], s.get("status"), s.get("iterations"), s.get("total_calls"), s.get("audited_calls"),
             s.get("final_rel_l2"), s.get("calls_to_threshold"))
        )
    summary_path = out / "summary.tsv"
    with open(summary_path, "w") as fh:
        fh.write("replication\tseed\tstatus\titerations\ttotal_calls\taudited_calls\tfinal_rel_l2\tcalls_to_threshold\n")
        for row in summary_rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")
    written.append(summary_path)
    return written


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return ",".join(k for k, flag in v.items() if flag)
    return str(v)
