"""Stand-in for the review UI; feedback arrives via `flor feedback`."""
print("review pages with: flor feedback page_color --document DOC --page N COLOR")
