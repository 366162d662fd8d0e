import pytest

from score_crl.mixing import LinearMix
import score_crl.properties as sut


def test_cases_registered() -> None:
    names = [c.name for c in sut.property_cases()]
    assert names == sorted(names)
    assert "score-diff-transform" in names
    assert "mcc-assignment" in names
    assert [c.name for c in sut.property_cases("^gscale-")] == [
        "gscale-global-minimum",
        "gscale-gradient",
    ]


def test_score_change_cases() -> None:
    cases = sut.property_cases("^score-changes-")
    assert [c.name for c in cases] == [
        "score-changes-coupled",
        "score-changes-hard",
        "score-changes-hard-additive",
        "score-changes-soft",
        "score-changes-uncoupled",
    ]
    result = sut.run_case(cases[2], 10, 1)
    assert result.passed, result.messages


def test_duplicate_registration() -> None:
    with pytest.raises(ValueError):
        sut.property_case("mcc-assignment", "Again")(lambda _r, _t: None)


@pytest.mark.parametrize(
    "case", sut.property_cases(), ids=lambda c: c.name
)
def test_case_holds(case) -> None:
    result = sut.run_case(case, 3, 0)
    assert result.passed, result.messages


def test_sign_flip_detected(monkeypatch) -> None:
    original = LinearMix.pushforward

    def flipped(self, latent, z):
        return -original(self, latent, z)

    monkeypatch.setattr(LinearMix, "pushforward", flipped)
    [case] = sut.property_cases("^score-diff-transform$")
    result = sut.run_case(case, 2, 5)
    assert result.failing_seeds == (5, 6)
    assert "Linear pull-back mismatch" in result.messages[0]


class TestSuite:
    def test_report(self) -> None:
        report = sut.run_property_suite("graph-distances", instances=2)
        assert report.passed
        assert not report.failures
        assert str(report) == "PASS graph-distances [instances=2]"

    def test_failure_lines(self) -> None:
        report = sut.SuiteReport(
            (
                sut.CaseResult("a", "A holds", 1),
                sut.CaseResult("b", "B holds", 2, (3,), ("Broken [x=1]",)),
            )
        )
        assert not report.passed
        assert [r.name for r in report.failures] == ["b"]
        assert str(report).splitlines() == [
            "PASS a [instances=1]",
            "FAIL b [seeds=3] Broken [x=1]",
        ]

    def test_unknown_pattern(self) -> None:
        with pytest.raises(ValueError):
            sut.run_property_suite("no-such-case")

    def test_invalid_instances(self) -> None:
        with pytest.raises(ValueError):
            sut.run_property_suite(instances=0)
