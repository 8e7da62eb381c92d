"""Regenerate the expected outputs in tests/golden/.

    python3 scripts/update_golden.py

Run this only after an intentional change to the pipeline's output; the
end-to-end tests compare fresh runs against these files byte for byte.
"""

import shutil
import tempfile
from pathlib import Path

from iragent.cli import main

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "iragent" / "data"
GOLDEN = ROOT / "tests" / "golden"

# name -> scripted answers for `session` on the bundled ink data
SESSIONS = {
    "session_accept": ["1", "accept"],
    "session_edit_m7": ["1", "m=7", "accept"],
    "session_manual": ["manual", "SG(m=4)+MinMax", "PCA(n_components=3)", "accept"],
}
SESSION_QUESTION = "stamp pad ink"


def golden_run(out_dir: Path) -> Path:
    code = main(["run", str(DATA / "run_config.json"), "--mock-backend", "--out", str(out_dir)])
    if code != 0:
        raise SystemExit(f"run failed with exit code {code}")
    return out_dir / "run_report.json"


def golden_session(name: str, work: Path) -> Path:
    answers = work / f"{name}.answers"
    answers.write_text("\n".join(SESSIONS[name]) + "\n")
    plan = work / f"{name}.plan.json"
    code = main(["session", str(DATA / "ink.csv"), SESSION_QUESTION,
                 "--answers", str(answers), "-o", str(plan)])
    if code != 0:
        raise SystemExit(f"session {name} failed with exit code {code}")
    return plan


def main_():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        shutil.copy(golden_run(work / "run"), GOLDEN / "run_report.json")
        for name in SESSIONS:
            shutil.copy(golden_session(name, work), GOLDEN / f"{name}.plan.json")
    for p in sorted(GOLDEN.iterdir()):
        print(p.relative_to(ROOT))


if __name__ == "__main__":
    main_()
