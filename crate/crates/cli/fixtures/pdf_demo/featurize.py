import json
import os

import flor

features = {}
for doc_name in flor.loop("document", sorted(os.listdir("pages"))):
    page_files = sorted(os.listdir(os.path.join("pages", doc_name)))
    with open(os.path.join("pages", doc_name, page_files[0])) as f:
        flor.log("first_page", f.read().strip())
    features[doc_name] = {}
    for page in flor.loop("page", range(len(page_files))):
        with open(os.path.join("pages", doc_name, page_files[page])) as f:
            page_text = f.read().strip()
        # text_src is "OCR" or "TXT"
        text_src = "OCR" if page % 2 == 0 else "TXT"
        flor.log("text_src", text_src)
        flor.log("page_text", page_text)

        headings, page_numbers = page_text.split()[0], page + 1
        flor.log("headings", headings)
        flor.log("page_numbers", page_numbers)
        features[doc_name][str(page)] = page_text

with open("features.json", "w") as f:
    json.dump(features, f, indent=1, sort_keys=True)
