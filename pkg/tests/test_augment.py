from pathlib import Path

import pytest

from utrl.augment import (
    ConversionError,
    convert_assertion,
    convert_signature,
    extract_functions,
    filter_suite,
    generate_tests,
    run_pipeline,
    solvability_filter,
    write_instances,
)
from utrl.augment.extract import SourceFunction, default_english_detector
from utrl.augment.testgen import GeneratedSuite, GenerationFailure
from utrl.dataset import Problem, load_augmented
from utrl.policy import DecodingParams, ToyPolicy, UpdateItem
from utrl.policy.toy import derive_vocabulary
from utrl.sandbox import Sandbox

CORPUS = Path(__file__).parent / "fixtures" / "java_corpus"


def make_fn(signature, description=None, code=None):
    description = description or (
        "A plain method that exists for conversion tests and it has the "
        "required number of tokens in its description."
    )
    return SourceFunction(
        description=description,
        signature=signature,
        code=code or f"{signature} {{ return 0; }}",
        origin="test.java",
    )


class TestConvertSignature:
    def test_typed_int_pair_header(self):
        assert convert_signature("public static int max(int a, int b)") == "def max(a, b):"

    def test_boolean_pair_header(self):
        source = "public static boolean monkeyTrouble2(boolean aSmile, boolean bSmile)"
        assert convert_signature(source) == "def monkeyTrouble2(aSmile, bSmile):"

    def test_zero_parameters(self):
        assert convert_signature("static void f()") == "def f():"

    def test_generics_and_arrays(self):
        converted = convert_signature(
            "public static Map<String, Integer> index(List<String> names, int[] counts)"
        )
        assert converted == "def index(names, counts):"

    def test_varargs(self):
        assert convert_signature("static int sum(int... xs)") == "def sum(xs):"

    def test_throws_clause(self):
        converted = convert_signature("public int parse(String s) throws IOException")
        assert converted == "def parse(s):"

    def test_output_is_not_reconvertible(self):
        # conversion is one-directional: its own output is not source language
        with pytest.raises(ConversionError):
            convert_signature(convert_signature("public static int max(int a, int b)"))

    def test_garbage_rejected(self):
        with pytest.raises(ConversionError):
            convert_signature("not a method header at all")


class TestConvertAssertion:
    def test_string_equality_with_boolean_args(self):
        converted = convert_assertion('assertEquals("Yes", monkeyTrouble2(false, false));')
        assert converted == 'assert monkeyTrouble2(False, False) == "Yes"'

    def test_int_equality_example(self):
        assert (
            convert_assertion("assertEquals(581, max(0, 581));")
            == "assert max(0, 581) == 581"
        )

    def test_long_suffix_stripped(self):
        assert convert_assertion("assertEquals(0L, f());") == "assert f() == 0"

    def test_float_suffixes(self):
        assert convert_assertion("assertEquals(2.5f, g(1));") == "assert g(1) == 2.5"
        assert convert_assertion("assertEquals(2.0d, g(2));") == "assert g(2) == 2.0"

    def test_boolean_and_null_literals(self):
        assert convert_assertion("assertEquals(true, h());") == "assert h() == True"
        assert convert_assertion("assertEquals(null, h());") == "assert h() == None"

    def test_char_literal_becomes_string(self):
        assert convert_assertion("assertEquals('a', firstChar(\"abc\"));") == (
            'assert firstChar("abc") == "a"'
        )

    def test_array_literal_becomes_list(self):
        converted = convert_assertion("assertEquals(new int[]{1, 2, 3}, seq(3));")
        assert converted == "assert seq(3) == [1, 2, 3]"

    def test_truth_assertions(self):
        assert convert_assertion("assertTrue(check(1));") == "assert check(1) == True"
        assert convert_assertion("assertFalse(check(2));") == "assert check(2) == False"

    def test_nested_call_arguments(self):
        converted = convert_assertion("assertEquals(4, outer(inner(2), 1));")
        assert converted == "assert outer(inner(2), 1) == 4"

    def test_string_escapes_preserved(self):
        converted = convert_assertion('assertEquals("a\\nb", f("x\\ty"));')
        assert converted == 'assert f("x\\ty") == "a\\nb"'

    def test_constructor_expected_rejected(self):
        with pytest.raises(ConversionError):
            convert_assertion("assertEquals(new Box(1), makeBox(1));")

    def test_non_call_actual_rejected(self):
        with pytest.raises(ConversionError):
            convert_assertion("assertEquals(1, 1);")

    def test_float_tolerance_mode(self):
        converted = convert_assertion("assertEquals(2.5, g(1));", float_tolerance=1e-6)
        assert converted == "assert abs(g(1) - 2.5) <= 1e-06"
        exact = convert_assertion("assertEquals(2.5, g(1));")
        assert exact == "assert g(1) == 2.5"


class TestExtract:
    def test_corpus_extraction(self):
        functions = extract_functions(CORPUS)
        names = {f.signature.split("(")[0].split()[-1] for f in functions}
        assert "max" in names and "monkeyTrouble2" in names
        assert "ignoredByLengthFilter" not in names  # five-token description
        assert "verdoppeln" not in names  # non-English description

    def test_description_tokens_bounds(self):
        functions = extract_functions(CORPUS, min_tokens=10, max_tokens=512)
        for fn in functions:
            assert 10 <= len(fn.description.split()) <= 512

    def test_custom_detector(self):
        everything = extract_functions(CORPUS, english_detector=lambda text: True)
        default = extract_functions(CORPUS)
        assert len(everything) > len(default)

    def test_english_heuristic(self):
        assert default_english_detector("this method returns the larger of the two values")
        assert not default_english_detector("verdoppelt den angegebenen wert und liefert zurueck")


class TestGenerateTests:
    def test_mock_generator_emits_suite(self):
        fn = make_fn("public static int max(int a, int b)")
        suite = generate_tests(fn, index=0)
        assert isinstance(suite, GeneratedSuite)
        assert len(suite.tests) == 4

    def test_single_assertion_passes_through(self):
        fn = make_fn("public static int lonely(int x)")
        suite = generate_tests(fn, index=1)
        assert isinstance(suite, GeneratedSuite)
        assert len(suite.tests) == 1
        assert filter_suite(suite) is None

    def test_generator_crash_is_structured_failure(self):
        fn = make_fn("public static int crashMaker(int x)")
        outcome = generate_tests(fn, index=2)
        assert isinstance(outcome, GenerationFailure)

    def test_unknown_method_yields_failure(self):
        fn = make_fn("public static int neverHeardOf(int x)")
        outcome = generate_tests(fn, index=3)
        assert isinstance(outcome, GenerationFailure)


class TestFilterSuite:
    def test_mixed_outcomes_kept(self):
        fn = make_fn("public static String monkeyTrouble2(boolean a, boolean b)")
        suite = GeneratedSuite(
            fn,
            [
                'assertEquals("Yes", monkeyTrouble2(false, false));',
                'assertEquals("Yes", monkeyTrouble2(true, true));',
                'assertEquals("No", monkeyTrouble2(true, false));',
                'assertEquals("No", monkeyTrouble2(false, true));',
            ],
        )
        assert filter_suite(suite) is suite

    def test_all_false_rejected(self):
        fn = make_fn("public static boolean alwaysFalse(int x)")
        suite = GeneratedSuite(
            fn,
            [
                "assertFalse(alwaysFalse(1));",
                "assertFalse(alwaysFalse(2));",
                "assertFalse(alwaysFalse(3));",
            ],
        )
        assert filter_suite(suite) is None

    def test_single_test_rejected(self):
        fn = make_fn("public static int lonely(int x)")
        assert filter_suite(GeneratedSuite(fn, ["assertEquals(7, lonely(7));"])) is None


class TestPipeline:
    def test_end_to_end_over_fixture_corpus(self, tmp_path):
        sandbox = Sandbox()
        result = run_pipeline(CORPUS, sandbox)
        emitted = {i.signature for i in result.instances}
        assert "def max(a, b):" in emitted
        assert "def monkeyTrouble2(aSmile, bSmile):" in emitted
        assert "def containsSubSequence(string1, string2):" in emitted
        # the all-false, single-test, constructor-expected, and crash cases drop
        assert "def alwaysFalse(x):" not in emitted
        assert "def lonely(x):" not in emitted
        assert "def makeBox(value):" not in emitted
        assert result.counters["dropped_generation"] >= 1

        out = tmp_path / "augmented.jsonl"
        write_instances(result, out, loss_weight=0.2)
        problems = load_augmented(out)
        assert all(p.loss_weight == 0.2 for p in problems)
        assert all(p.seed_solutions == [] for p in problems)
        sidecar = out.with_suffix(".jsonl.provenance.jsonl")
        assert sidecar.exists()

    def test_idempotent_over_same_corpus(self, tmp_path):
        sandbox = Sandbox()
        first = run_pipeline(CORPUS, sandbox)
        second = run_pipeline(CORPUS, sandbox)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_instances(first, a)
        write_instances(second, b)
        assert a.read_bytes() == b.read_bytes()

    def test_every_instance_compiles_with_stub(self):
        sandbox = Sandbox()
        result = run_pipeline(CORPUS, sandbox)
        assert result.instances
        for instance in result.instances:
            for assertion in instance.assertions:
                program = f"{instance.signature}\n    pass\n{assertion}\n"
                ok, diag = sandbox.check_compile(program)
                assert ok, diag

    def test_empty_corpus(self, tmp_path):
        result = run_pipeline(tmp_path, Sandbox())
        assert result.instances == []
        assert result.counters["extracted"] == 0


class TestSolvabilityFilter:
    def test_keeps_solvable_rejects_unsatisfiable(self):
        solvable = Problem(
            id="s",
            description="identity function",
            signature="def idf(x):",
            unit_tests=["assert idf(5) == 5"],
            source="augmented",
            loss_weight=0.2,
        )
        impossible = Problem(
            id="u",
            description="no program passes",
            signature="def imp(x):",
            unit_tests=["assert imp(1) == 1 and imp(1) == 2"],
            source="augmented",
            loss_weight=0.2,
        )
        body = "    return x\n"
        from utrl.dataset import make_prompt

        texts = [make_prompt(solvable), make_prompt(impossible), body]
        policy = ToyPolicy(vocabulary=derive_vocabulary(texts), context_len=6, rows=2048, seed=1)
        policy.freeze_reference()
        # concentrate the policy on the correct body for both prompts
        for prompt in (make_prompt(solvable), make_prompt(impossible)):
            scored = policy.score(prompt, body)
            from utrl.policy import Trajectory

            trajectory = Trajectory(
                prompt=prompt,
                text=body,
                tokens=scored.tokens,
                logp_policy=scored.logp_policy,
                logp_reference=scored.logp_reference,
            )
            for _ in range(30):
                policy.apply_update([UpdateItem(trajectory, 1.0, 1.0)], 0.5)

        kept, rejected = solvability_filter(
            [solvable, impossible],
            policy,
            Sandbox(),
            n=20,
            params=DecodingParams(max_len=40),
        )
        assert solvable in kept
        assert impossible in rejected
