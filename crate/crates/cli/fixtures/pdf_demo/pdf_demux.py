"""Split each source document into one text file per page."""
import os

for doc in ["a.pdf", "b.pdf"]:
    with open(doc) as f:
        lines = f.read().splitlines()
    out_dir = os.path.join("pages", doc)
    os.makedirs(out_dir, exist_ok=True)
    for i, line in enumerate(lines):
        with open(os.path.join(out_dir, "page_%d.txt" % i), "w") as f:
            f.write(line + "\n")
