"""Run a small scripted benchmark end to end and print its report table.

Everything is offline: frame tables are synthetic and every model reply
comes from a script, so the latencies and the table are reproducible.
"""

import tempfile
from pathlib import Path

from cogniloop import Sample, SessionConfig, mock_suite, run_benchmark
from cogniloop import scenarios

work = Path(tempfile.mkdtemp(prefix="cogniloop-demo-"))
scenarios.table().save(work / "teddy.json")

samples = [
    Sample(f"clip{i}", str(work / "teddy.json"), scenarios.QUESTION, scenarios.OPTIONS, answer_index=0)
    for i in range(4)
]

for label, cfg in [("full loop", SessionConfig()), ("no verification", SessionConfig(verification_enabled=False))]:
    out = work / label.replace(" ", "_")
    report = run_benchmark(samples, cfg, mock_suite(scenarios.script()), out, parallelism=2)
    print("==", label, "==")
    print(report.render_table())
    print()

print("traces and reports written under", work)
