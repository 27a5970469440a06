"""Seed labels for the first training round."""
import json

with open("labels.json", "w") as f:
    json.dump({"a.pdf": "green", "b.pdf": "red"}, f, indent=1, sort_keys=True)
