import csv
import io
import json
import socket
import subprocess
import sys


from aqflow.cases import case_document
from aqflow.cli import main


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_pf_nr(tmp_path):
    assert main(["pf", "--case", "case9", "--method", "nr", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "solution.csv")
    assert len(rows) == 9
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"][0] == "pf" and manifest["case"] == "case9"


def test_unknown_case_is_usage_error(tmp_path):
    assert main(["pf", "--case", "case14", "--out-dir", str(tmp_path)]) == 2


def test_bad_flag_is_usage_error():
    assert main(["pf", "--no-such-flag"]) == 2


def test_case_file(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(case_document("case9"))
    assert main(["pf", "--case-file", str(f), "--out-dir", str(tmp_path / "o")]) == 0


def test_invalid_case_file(tmp_path):
    doc = json.loads(case_document("case9"))
    doc["lines"][0]["x"] = 0
    f = tmp_path / "c.json"
    f.write_text(json.dumps(doc))
    assert main(["pf", "--case-file", str(f), "--out-dir", str(tmp_path / "o")]) == 2


def test_opf_brute(tmp_path):
    assert main(["opf", "--case", "case9", "--method", "brute", "--step", "5", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "dispatch.csv")
    assert [int(r["bus"]) for r in rows] == [1, 2, 3]


def test_aqpf_from_cli_and_replay(tmp_path):
    out = tmp_path / "a"
    args = ["pf", "--case", "case9", "--method", "aqpf", "--readouts", "20", "--sweeps", "2",
            "--it-max", "3", "--out-dir", str(out)]
    code = main(args)
    assert code in (0, 1)
    again = tmp_path / "b"
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(again)]) == code
    for name in ("solution.csv", "trace.csv", "deviation.csv"):
        assert (out / name).read_text() == (again / name).read_text()


def test_hil_run_without_server_exits_3(tmp_path):
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    code = main(["hil", "run", "--case", "case9_res", "--endpoint", f"127.0.0.1:{port}",
                 "--retries", "1", "--out-dir", str(tmp_path)])
    assert code == 3


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "aqflow.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "replay" in res.stdout
