import pytest

from mwpdistill.masking import ProblemRecord

TABLE1_TEXT = ("Andy has 12 apples, Bob has 20 apples, and Bob gives 2 apples to Andy, "
               "how many more apples does Bob have than Andy now?")
TABLE1_MASKED = ("Andy has 12[blank][Mask1] apples, Bob has 20[blank][Mask2] apples, and Bob gives "
                 "2[blank][Mask3] apples to Andy, how many more apples does Bob have than Andy now?")
TABLE1_MASK_EQUATION = "[Mask2]-[Mask1]-[Mask3]-[Mask3]"


@pytest.fixture
def apples():
    return ProblemRecord("apples", TABLE1_TEXT, 4)


def cli(*argv):
    from mwpdistill.cli import main
    return main([str(a) for a in argv])


def full_run(workdir, fixture_dir, config, interrupt=False):
    """synth fixture -> distill -> refine -> export; returns the export bytes.

    With ``interrupt`` the distill and refine steps are each stopped after
    one batch / sweep and resumed from the checkpoint.
    """
    ckpt = workdir / "run.json"
    data, transcripts = fixture_dir / "dataset.json", fixture_dir / "transcripts"
    common = ["--config", config, "--checkpoint", ckpt]
    if interrupt:
        assert cli("distill", data, *common, "--mock-transcripts", transcripts, "--max-batches", 1) == 0
    assert cli("distill", data, *common, "--mock-transcripts", transcripts) == 0
    if interrupt:
        assert cli("refine", *common, "--max-sweeps", 1) == 0
    assert cli("refine", *common) == 0
    out = workdir / "train.jsonl"
    assert cli("export", *common, "-o", out) == 0
    return out.read_bytes()


_ACCEPTANCE = []


def record_criterion(name, passed, elapsed, limit, detail=""):
    """Log one acceptance line; the terminal summary prints them all."""
    within = elapsed < limit
    ok = passed and within
    line = f"{name} {'PASS' if ok else 'FAIL'}  {elapsed:.2f}s (limit {limit:g}s)  {detail}".rstrip()
    _ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
