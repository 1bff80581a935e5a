"""A captioner hallucination, with and without the verification pass.

The scripted video shows a boy carrying a bag. One preview caption wrongly
says he holds a teddy bear. Without verification the planner trusts the
caption; with it, a targeted visual question contradicts the claim and the
answer flips.
"""

from cogniloop import SessionConfig, mock_suite, run_session
from cogniloop import scenarios
from cogniloop.harness import frames_metric, render_trace

for verify in (False, True):
    cfg = SessionConfig(verification_enabled=verify)
    result = run_session(
        scenarios.table(), scenarios.QUESTION, scenarios.OPTIONS, cfg, mock_suite(scenarios.script())
    )
    answer = scenarios.OPTIONS[result.answer_index]
    print("verification=%-5s answer=%d (%s)  frames=%d  llm calls=%d" % (
        verify, result.answer_index, answer, frames_metric(result.trace), result.trace.llm_calls()))

print()
print(render_trace(result.trace))
