"""Pick the best committed checkpoint (or a fallback) and color the pages."""
import csv
import io
import os
import subprocess

import flor


def query_csv(*names):
    flor_bin = os.environ.get("FLOR_BIN", "flor")
    out = subprocess.run(
        [flor_bin, "query", *names, "--csv"], capture_output=True, text=True
    )
    if out.returncode != 0:
        return []
    return list(csv.DictReader(io.StringIO(out.stdout)))


rows = [r for r in query_csv("acc", "model") if r.get("acc") and r.get("model")]
if rows:
    best = max(rows, key=lambda r: float(r["acc"]))
    model_ref = best["model"]
    flor.log("model_source", "checkpoint")
else:
    model_ref = "fallback"
    flor.log("model_source", "fallback")
flor.log("model_ref", model_ref)

for doc_name in flor.loop("document", sorted(os.listdir("pages"))):
    page_files = sorted(os.listdir(os.path.join("pages", doc_name)))
    for page in flor.loop("page", range(len(page_files))):
        color = "green" if (len(doc_name) + page) % 2 == 0 else "yellow"
        flor.log("pred_color", color)
