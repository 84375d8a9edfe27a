"""Exercises the vdesk extension end to end against the bundled fixtures.

Build first:  pip install --no-build-isolation -e crates/py
Run:          python python/smoke_test.py
"""

import json
import pathlib
import sys
import tempfile

import vdesk

ROOT = pathlib.Path(__file__).resolve().parent.parent
DESK = ROOT / "crates/core/fixtures/desk"
GROUNDING = ROOT / "crates/core/fixtures/grounding"


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        sys.exit(1)


def main():
    ev = vdesk.encode_event({"kind": "pointer", "x": 100, "y": 200, "mask": 0})
    check(ev == bytes.fromhex("05 00 00 64 00 C8"), "pointer event bytes")
    masks = [e["mask"] for e in vdesk.compile_action({"kind": "right_click", "point": {"x": 3, "y": 4}}, 64, 64)]
    check(masks == [0, 4, 0], "right click compiles to masks 0,4,0")

    report = vdesk.grounding_eval(GROUNDING / "dataset.jsonl", GROUNDING / "predictions_ten.jsonl")
    check(report["overall"][0]["percent"] == "40.0", "grounding 4 of 10 is 40.0")
    zero = vdesk.grounding_eval(GROUNDING / "dataset.jsonl", GROUNDING / "predictions_zero.jsonl",
                                group_by=["platform", "application"])
    check(all(r["percent"] == "0.0" for r in zero["groups"]), "all-failure predictions give zero rows")

    check(vdesk.critic_accuracy(DESK / "critic_records.jsonl") == 0.75, "critic accuracy 0.75")
    tasks = vdesk.load_suite(DESK / "suite.json")
    check(len(tasks) == 12, "suite has 12 tasks")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        sandbox = tmp / "sb"
        sandbox.mkdir()
        task = {"id": "t", "instruction": "x", "level": 1,
                "evaluator": {"node": "file_exists", "path": "done"}}
        check(not vdesk.evaluate_task(task, sandbox)["success"], "evaluator fails on empty sandbox")
        (sandbox / "done").write_text("")
        check(vdesk.evaluate_task(json.dumps(task), sandbox)["success"], "evaluator passes once file exists")

        summaries = vdesk.run_suite(DESK / "suite.json", "scripted", tmp / "run",
                                    solutions=DESK / "solutions.json", scenario=DESK / "scenario.json")
        level1 = [s for s in summaries if s["level"] == 1]
        check(all(s["success"] for s in level1), "scripted policy solves every level-1 task")

        mock = vdesk.MockDesktop(DESK / "scenario.json")
        mgr = vdesk.SessionManager(tmp / "data", [f"127.0.0.1:{mock.port}"],
                                   suite=DESK / "suite.json", solutions=DESK / "solutions.json")
        info = mgr.create_session("127.0.0.1", mock.port)
        sid = info["id"]
        check(info["state"] == "live", "session is live")
        out = mgr.submit_action(sid, {"kind": "click", "point": {"x": 10, "y": 10}})
        check(out["status"] == "executed", "click executes without approval")
        out = mgr.submit_action(sid, {"kind": "exec_command", "command": "echo hi > hi.txt"})
        check(out["status"] == "pending", "command waits for approval")
        done = mgr.resolve(out["request"]["id"], "approve")
        check(done["step"]["approval"] == out["request"]["id"], "approved step carries its approval")
        try:
            mgr.resolve(out["request"]["id"], "reject")
            check(False, "second resolution rejected")
        except RuntimeError:
            check(True, "second resolution rejected")
        check(mgr.submit_feedback(sid, "nice", step=1)["source"] == "human", "feedback recorded")
        gated = [r for r in mgr.audit() if r.get("gated")]
        check(len(gated) == 1 and gated[0]["approval"] == out["request"]["id"], "audit log maps execution to approval")
        png = mgr.frame_png(sid, mgr.observation(sid)["screenshot"]["timestamp"])
        check(png[:4] == b"\x89PNG", "frame served as PNG")
        mgr.close_session(sid)
        tar = mgr.trajectory_tar(sid)
        check(b"steps.jsonl" in tar, "trajectory exports as tar")
        check(any(e["kind"] == "pointer" for e in mock.input_events()), "mock saw pointer input")
        mgr.shutdown()
        mock.close()
    print("smoke test passed")


if __name__ == "__main__":
    main()
