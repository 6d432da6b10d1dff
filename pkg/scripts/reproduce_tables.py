"""Render the shipped per-video reference tables with their dataset averages."""

import argparse
from importlib import resources

from fusionseg import evaluation as ev


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("tables", nargs="*", default=list(ev.REFERENCE_TABLES))
    args = parser.parse_args()
    for name in args.tables:
        rows = ev.load_reference(name)
        if name == "youtube":
            with resources.as_file(resources.files("fusionseg.data") / "youtube_categories.csv") as path:
                cats = ev.read_categories(path)
            text, _ = ev.render_table(rows, "per-category", cats)
        else:
            text, _ = ev.render_table(rows)
        print(f"== {name} ==")
        print(text)


if __name__ == "__main__":
    main()
