#!/usr/bin/env python3
"""
pf-regen Schema Export
Writes the published JSON schema of RunReport to docs/run_report.schema.json
"""

import json
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).resolve().parent.parent))

from core.reports import report_schema  # noqa: E402

DEFAULT_PATH = Path(__file__).resolve().parent.parent / "docs" / "run_report.schema.json"


def export_schema(path: Path = DEFAULT_PATH) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_schema(), indent=2, sort_keys=True) + "\n")
    return path


def main():
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_PATH
    print(f"Wrote {export_schema(target)}")


if __name__ == "__main__":
    main()
