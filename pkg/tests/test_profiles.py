import random

import pytest

from surveysim.profiles import (
    BIG5_TRAITS,
    AttributeSpec,
    CategoricalOption,
    Constraint,
    ConstraintTerm,
    ProfileSchema,
    UnknownPlaceholderError,
    UnsatisfiableConstraintError,
    generate_population,
    population_from_csv,
    population_to_csv,
    render_profile_prompt,
    sample_conditional,
    schema_from_yaml,
    schema_to_yaml,
    validate_schema,
)


def cat(name, *values, weights=None):
    weights = weights or [1.0] * len(values)
    return AttributeSpec(
        name=name,
        kind="categorical",
        options=tuple(CategoricalOption(v, w) for v, w in zip(values, weights)),
    )


class TestValidateSchema:
    def test_duplicate_attribute_name(self):
        schema = ProfileSchema(attributes=(cat("age", "a", "b"), cat("age", "x", "y")))
        report = validate_schema(schema)
        assert len(report.issues) == 1
        assert report.issues[0].subject == "age"

    def test_zero_weights(self):
        schema = ProfileSchema(attributes=(cat("color", "r", "g", weights=[0.0, 0.0]),))
        report = validate_schema(schema)
        assert any("weights sum to zero" in i.message for i in report.issues)

    def test_well_formed_schema_passes(self, basic_schema):
        assert validate_schema(basic_schema).ok

    def test_inverted_bounds(self):
        schema = ProfileSchema(
            attributes=(AttributeSpec(name="age", kind="integer-range", low=90, high=18),)
        )
        assert not validate_schema(schema).ok

    def test_constraint_on_undeclared_attribute(self):
        schema = ProfileSchema(
            attributes=(cat("gender", "male", "female"),),
            constraints=(
                Constraint(kind="forbid", terms=(ConstraintTerm("orientation", value="x"),)),
            ),
        )
        report = validate_schema(schema)
        assert any("undeclared" in i.message for i in report.issues)

    def test_forbid_with_factor_rejected(self):
        schema = ProfileSchema(
            attributes=(cat("gender", "male", "female"),),
            constraints=(
                Constraint(
                    kind="forbid", terms=(ConstraintTerm("gender", value="male"),), factor=2.0
                ),
            ),
        )
        assert not validate_schema(schema).ok


class TestGeneratePopulation:
    def test_n_zero_gives_empty_list(self, basic_schema):
        assert generate_population(basic_schema, 0, 42) == []

    def test_determinism(self, basic_schema):
        first = generate_population(basic_schema, 3, 7)
        second = generate_population(basic_schema, 3, 7)
        assert first == second

    def test_prefix_stability(self, basic_schema):
        full = generate_population(basic_schema, 50, 99)
        prefix = generate_population(basic_schema, 20, 99)
        assert full[:20] == prefix

    def test_degenerate_integer_domain(self):
        schema = ProfileSchema(
            attributes=(AttributeSpec(name="age", kind="integer-range", low=30, high=30),)
        )
        population = generate_population(schema, 1000, 5)
        assert all(p.attributes["age"] == 30 for p in population)

    def test_agent_ids_unique(self, basic_schema):
        population = generate_population(basic_schema, 200, 3)
        assert len({p.agent_id for p in population}) == 200

    def test_forbidden_conjunction_never_sampled(self):
        # the canonical incoherent-profile fixture: no male lesbians
        schema = ProfileSchema(
            attributes=(
                cat("gender", "male", "female"),
                cat("orientation", "straight", "gay", "lesbian", "bisexual"),
            ),
            constraints=(
                Constraint(
                    kind="forbid",
                    terms=(
                        ConstraintTerm("gender", value="male"),
                        ConstraintTerm("orientation", value="lesbian"),
                    ),
                ),
            ),
        )
        population = generate_population(schema, 10_000, 1234)
        violations = [
            p
            for p in population
            if p.attributes["gender"] == "male" and p.attributes["orientation"] == "lesbian"
        ]
        assert violations == []

    def test_unsatisfiable_constraints_raise(self):
        schema = ProfileSchema(
            attributes=(cat("gender", "male"),),
            constraints=(
                Constraint(kind="forbid", terms=(ConstraintTerm("gender", value="male"),)),
            ),
        )
        with pytest.raises(UnsatisfiableConstraintError) as excinfo:
            generate_population(schema, 1, 0)
        assert "gender=male" in str(excinfo.value)

    def test_domain_safety(self, basic_schema):
        population = generate_population(basic_schema, 10_000, 8)
        genders = {"male", "female", "nonbinary"}
        for p in population:
            assert 18 <= p.attributes["age"] <= 90
            assert p.attributes["gender"] in genders
            traits = p.attributes["personality"]
            assert set(traits) == set(BIG5_TRAITS)
            assert all(0.0 <= v <= 1.0 for v in traits.values())


class TestSampleConditional:
    def test_weighted_marginal_matches_analytic(self):
        # oracle: analytic marginal of a 1:3 weighting is (0.25, 0.75)
        schema = ProfileSchema(attributes=(cat("pick", "a", "b", weights=[1.0, 3.0]),))
        rng = random.Random(77)
        draws = [sample_conditional(schema, rng)["pick"] for _ in range(10_000)]
        freq_b = draws.count("b") / len(draws)
        assert abs(freq_b - 0.75) < 0.05

    def test_no_constraints_matches_unconstrained(self):
        schema = ProfileSchema(attributes=(cat("pick", "a", "b"),))
        rng1 = random.Random(5)
        rng2 = random.Random(5)
        constrained = [sample_conditional(schema, rng1)["pick"] for _ in range(100)]
        unconstrained = [
            "a" if rng2.choices(["a", "b"], weights=[1, 1])[0] == "a" else "b"
            for _ in range(100)
        ]
        assert constrained == unconstrained

    def test_zero_factor_suppresses_category(self):
        schema = ProfileSchema(
            attributes=(cat("region", "north", "south"), cat("team", "red", "blue")),
            constraints=(
                Constraint(
                    kind="weight-multiplier",
                    terms=(
                        ConstraintTerm("region", value="north"),
                        ConstraintTerm("team", value="red"),
                    ),
                    factor=0.0,
                ),
            ),
        )
        rng = random.Random(13)
        for _ in range(2000):
            drawn = sample_conditional(schema, rng)
            assert not (drawn["region"] == "north" and drawn["team"] == "red")

    def test_multiplier_shifts_conditional_distribution(self):
        # with factor 9 on (old -> retired), P(retired | old) = 9/10
        schema = ProfileSchema(
            attributes=(
                cat("age_band", "young", "old"),
                cat("status", "working", "retired"),
            ),
            constraints=(
                Constraint(
                    kind="weight-multiplier",
                    terms=(
                        ConstraintTerm("age_band", value="old"),
                        ConstraintTerm("status", value="retired"),
                    ),
                    factor=9.0,
                ),
            ),
        )
        rng = random.Random(3)
        old_total = old_retired = 0
        for _ in range(20_000):
            drawn = sample_conditional(schema, rng)
            if drawn["age_band"] == "old":
                old_total += 1
                old_retired += drawn["status"] == "retired"
        assert abs(old_retired / old_total - 0.9) < 0.05

    def test_marginal_fidelity_l1(self):
        weights = [5.0, 3.0, 1.5, 0.5]
        total = sum(weights)
        schema = ProfileSchema(
            attributes=(cat("band", "a", "b", "c", "d", weights=weights),)
        )
        population = generate_population(schema, 10_000, 21)
        l1 = 0.0
        for value, weight in zip("abcd", weights):
            empirical = sum(p.attributes["band"] == value for p in population) / len(population)
            l1 += abs(empirical - weight / total)
        assert l1 < 0.05


class TestRendering:
    def test_direct_substitution(self, basic_schema):
        population = generate_population(basic_schema, 1, 42)
        profile = population[0]
        text = render_profile_prompt(profile, basic_schema, "you are <AGE>")
        assert text == f"you are {profile.attributes['age']}"

    def test_unknown_placeholder(self, basic_schema):
        profile = generate_population(basic_schema, 1, 42)[0]
        with pytest.raises(UnknownPlaceholderError) as excinfo:
            render_profile_prompt(profile, basic_schema, "you earn <INCOME>")
        assert excinfo.value.placeholder == "INCOME"

    def test_no_residual_markers(self, basic_schema):
        profile = generate_population(basic_schema, 1, 42)[0]
        text = render_profile_prompt(
            profile, basic_schema, "age <AGE>, gender <GENDER>, traits <PERSONALITY>"
        )
        assert "<" not in text

    def test_storytelling_deterministic(self):
        yaml_text = schema_to_yaml(
            ProfileSchema(
                attributes=(
                    AttributeSpec(name="age", kind="integer-range", low=20, high=60, units="years"),
                    cat("gender", "male", "female"),
                ),
                narrative_mode="storytelling",
            )
        )
        schema = schema_from_yaml(yaml_text)
        profile = generate_population(schema, 1, 7)[0]
        first = render_profile_prompt(profile, schema, "")
        second = render_profile_prompt(profile, schema, "")
        assert first == second
        assert profile.narrative == first
        assert str(profile.attributes["age"]) in first

    def test_story_varies_across_profiles(self):
        schema = schema_from_yaml(
            schema_to_yaml(
                ProfileSchema(
                    attributes=(
                        AttributeSpec(name="age", kind="integer-range", low=20, high=60),
                    ),
                    narrative_mode="storytelling",
                )
            )
        )
        stories = {p.narrative for p in generate_population(schema, 30, 11)}
        assert len(stories) > 1


class TestSerialization:
    def test_yaml_round_trip(self, basic_schema):
        assert schema_from_yaml(schema_to_yaml(basic_schema)) == basic_schema

    def test_constraints_round_trip(self):
        schema = ProfileSchema(
            attributes=(
                AttributeSpec(name="age", kind="integer-range", low=18, high=90),
                cat("status", "working", "retired"),
            ),
            constraints=(
                Constraint(
                    kind="weight-multiplier",
                    terms=(
                        ConstraintTerm("age", interval=(60.0, 90.0)),
                        ConstraintTerm("status", value="retired"),
                    ),
                    factor=4.0,
                    name="retirement-age",
                ),
            ),
        )
        assert schema_from_yaml(schema_to_yaml(schema)) == schema

    def test_population_csv_round_trip(self, basic_schema):
        population = generate_population(basic_schema, 25, 17)
        text = population_to_csv(population, basic_schema)
        loaded = population_from_csv(text, basic_schema)
        assert loaded == population

    def test_population_csv_header(self, basic_schema):
        text = population_to_csv([], basic_schema)
        header = text.splitlines()[0].split(",")
        assert header[:3] == ["agent_id", "seed", "age"]
        assert "personality.openness" in header
