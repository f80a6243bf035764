"""Synthetic respondent populations.

Profiles are sampled from a declarative schema: an ordered list of
attributes (categorical, numeric ranges, or a five-trait personality
block) plus constraints that either forbid attribute combinations outright
or reweight categorical draws conditioned on attributes drawn earlier.
Generation is a pure function of (schema, n, seed): every agent gets a
sub-seed mixed from the run seed and its index, so populations of
different sizes share a prefix and agents can be regenerated in isolation.
"""

from __future__ import annotations

import csv
import io
import json
import random
import re
from dataclasses import dataclass, field

import yaml

CATEGORICAL = "categorical"
INTEGER_RANGE = "integer-range"
REAL_RANGE = "real-range"
BIG5 = "big5"

ATTRIBUTE_KINDS = (CATEGORICAL, INTEGER_RANGE, REAL_RANGE, BIG5)

BIG5_TRAITS = (
    "openness",
    "conscientiousness",
    "extraversion",
    "agreeableness",
    "neuroticism",
)

MECHANISTIC = "mechanistic"
STORYTELLING = "storytelling"

DEFAULT_MAX_SAMPLE_ATTEMPTS = 1000

# splitmix64 finalizer constants
_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def mix_seed(seed: int, index: int) -> int:
    """Derive a 64-bit sub-seed from (seed, index) via the splitmix64 mix.

    Splittable: the sub-seed for index i never depends on any other index,
    which is what makes population prefixes stable across sizes.
    """
    z = (seed + (index + 1) * _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


class UnsatisfiableConstraintError(Exception):
    """Raised when rejection sampling cannot satisfy the forbid constraints."""

    def __init__(self, agent_index: int, attempts: int, constraints: list[str]):
        self.agent_index = agent_index
        self.attempts = attempts
        self.constraints = constraints
        names = ", ".join(constraints) or "unknown"
        super().__init__(
            f"agent {agent_index}: no valid sample after {attempts} attempts "
            f"(forbid constraints hit: {names})"
        )


class UnknownPlaceholderError(Exception):
    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(f"template references unknown attribute <{placeholder}>")


@dataclass(frozen=True)
class CategoricalOption:
    value: str
    weight: float = 1.0


@dataclass(frozen=True)
class AttributeSpec:
    """One sampled attribute: a weighted option list or a numeric range."""

    name: str
    kind: str
    options: tuple[CategoricalOption, ...] = ()
    low: float | None = None
    high: float | None = None
    units: str = ""


@dataclass(frozen=True)
class ConstraintTerm:
    """attribute == value, or attribute in [low, high] for numeric attributes."""

    attribute: str
    value: object = None
    interval: tuple[float, float] | None = None

    def matches(self, drawn: dict) -> bool:
        if self.attribute not in drawn:
            return False
        got = drawn[self.attribute]
        if self.interval is not None:
            lo, hi = self.interval
            return isinstance(got, (int, float)) and lo <= got <= hi
        return got == self.value


FORBID = "forbid"
WEIGHT_MULTIPLIER = "weight-multiplier"


@dataclass(frozen=True)
class Constraint:
    kind: str
    terms: tuple[ConstraintTerm, ...]
    factor: float | None = None
    name: str = ""

    def label(self) -> str:
        if self.name:
            return self.name
        parts = []
        for t in self.terms:
            if t.interval is not None:
                parts.append(f"{t.attribute} in [{t.interval[0]}, {t.interval[1]}]")
            else:
                parts.append(f"{t.attribute}={t.value}")
        return f"{self.kind}({' & '.join(parts)})"

    def matches(self, drawn: dict) -> bool:
        return all(t.matches(drawn) for t in self.terms)


@dataclass(frozen=True)
class ProfileSchema:
    attributes: tuple[AttributeSpec, ...]
    constraints: tuple[Constraint, ...] = ()
    narrative_mode: str = MECHANISTIC

    def attribute(self, name: str) -> AttributeSpec | None:
        for spec in self.attributes:
            if spec.name == name:
                return spec
        return None


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    attributes: dict
    seed: int
    narrative: str | None = None


@dataclass
class ValidationIssue:
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    def add(self, subject: str, message: str) -> None:
        self.issues.append(ValidationIssue(subject, message))

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self) -> str:
        return "ok" if self.ok else "; ".join(str(i) for i in self.issues)


def validate_schema(schema: ProfileSchema) -> ValidationReport:
    """Check every schema invariant; the report names each offender."""
    report = ValidationReport()
    seen: set[str] = set()
    for spec in schema.attributes:
        if spec.name in seen:
            report.add(spec.name, "duplicate attribute name")
        seen.add(spec.name)
        if spec.kind not in ATTRIBUTE_KINDS:
            report.add(spec.name, f"unknown kind {spec.kind!r}")
            continue
        if spec.kind == CATEGORICAL:
            if not spec.options:
                report.add(spec.name, "categorical attribute has no options")
            elif any(o.weight < 0 for o in spec.options):
                report.add(spec.name, "negative option weight")
            elif sum(o.weight for o in spec.options) <= 0:
                report.add(spec.name, "weights sum to zero")
            values = [o.value for o in spec.options]
            if len(values) != len(set(values)):
                report.add(spec.name, "duplicate option value")
        elif spec.kind in (INTEGER_RANGE, REAL_RANGE):
            if spec.low is None or spec.high is None:
                report.add(spec.name, "numeric attribute missing bounds")
            elif spec.low > spec.high:
                report.add(spec.name, f"bounds inverted ({spec.low} > {spec.high})")

    if schema.narrative_mode not in (MECHANISTIC, STORYTELLING):
        report.add("narrative_mode", f"unknown mode {schema.narrative_mode!r}")

    for i, constraint in enumerate(schema.constraints):
        subject = constraint.name or f"constraint[{i}]"
        if constraint.kind not in (FORBID, WEIGHT_MULTIPLIER):
            report.add(subject, f"unknown constraint kind {constraint.kind!r}")
        if not constraint.terms:
            report.add(subject, "constraint has no terms")
        for term in constraint.terms:
            if term.attribute not in seen:
                report.add(subject, f"references undeclared attribute {term.attribute!r}")
        if constraint.kind == WEIGHT_MULTIPLIER:
            if constraint.factor is None or constraint.factor < 0:
                report.add(subject, "weight-multiplier needs a nonnegative factor")
        elif constraint.factor is not None:
            report.add(subject, "forbid constraint must not carry a factor")
    return report


def _multiplier_for(
    schema: ProfileSchema, spec: AttributeSpec, option_value: str, drawn: dict
) -> float:
    """Combined weight multiplier for drawing option_value of spec.

    A weight-multiplier constraint applies first-order: it must have exactly
    one equality term on the attribute being drawn, and every other term
    must refer to an attribute that was already drawn and be satisfied.
    """
    factor = 1.0
    for constraint in schema.constraints:
        if constraint.kind != WEIGHT_MULTIPLIER:
            continue
        own = [t for t in constraint.terms if t.attribute == spec.name]
        if len(own) != 1 or own[0].interval is not None:
            continue
        if own[0].value != option_value:
            continue
        others = [t for t in constraint.terms if t.attribute != spec.name]
        if all(t.attribute in drawn and t.matches(drawn) for t in others):
            factor *= constraint.factor
    return factor


def _draw_attribute(schema: ProfileSchema, spec: AttributeSpec, drawn: dict, rng: random.Random):
    if spec.kind == CATEGORICAL:
        weights = [
            o.weight * _multiplier_for(schema, spec, o.value, drawn) for o in spec.options
        ]
        if sum(weights) <= 0:
            # all options suppressed; surfaces as rejection via forbid-style error
            raise UnsatisfiableConstraintError(
                -1, 0, [f"all weights of {spec.name} suppressed to zero"]
            )
        return rng.choices([o.value for o in spec.options], weights=weights, k=1)[0]
    if spec.kind == INTEGER_RANGE:
        return rng.randint(int(spec.low), int(spec.high))
    if spec.kind == REAL_RANGE:
        return rng.uniform(float(spec.low), float(spec.high))
    if spec.kind == BIG5:
        return {trait: rng.random() for trait in BIG5_TRAITS}
    raise ValueError(f"unknown attribute kind {spec.kind!r}")


def sample_conditional(
    schema: ProfileSchema,
    rng: random.Random,
    max_attempts: int = DEFAULT_MAX_SAMPLE_ATTEMPTS,
) -> dict:
    """Draw one attribute map honoring multipliers and forbids.

    Attributes are drawn in declared order; categorical weights are
    reshaped by every applicable multiplier before each draw; the whole
    draw is rejected and retried when a forbid constraint matches.
    """
    forbids = [c for c in schema.constraints if c.kind == FORBID]
    last_hit: list[str] = []
    for _ in range(max_attempts):
        drawn: dict = {}
        for spec in schema.attributes:
            drawn[spec.name] = _draw_attribute(schema, spec, drawn, rng)
        hit = [c.label() for c in forbids if c.matches(drawn)]
        if not hit:
            return drawn
        last_hit = hit
    raise UnsatisfiableConstraintError(-1, max_attempts, last_hit)


def generate_population(
    schema: ProfileSchema,
    n: int,
    seed: int,
    max_attempts: int = DEFAULT_MAX_SAMPLE_ATTEMPTS,
) -> list[AgentProfile]:
    """Generate exactly n profiles, deterministically in (schema, n, seed)."""
    report = validate_schema(schema)
    if not report.ok:
        raise ValueError(f"invalid schema: {report}")
    if n < 0:
        raise ValueError("population size must be >= 0")
    population = []
    for index in range(n):
        sub_seed = mix_seed(seed, index)
        rng = random.Random(sub_seed)
        try:
            attributes = sample_conditional(schema, rng, max_attempts=max_attempts)
        except UnsatisfiableConstraintError as exc:
            raise UnsatisfiableConstraintError(index, exc.attempts, exc.constraints) from None
        narrative = None
        if schema.narrative_mode == STORYTELLING:
            narrative = compose_story(attributes, schema, sub_seed)
        population.append(
            AgentProfile(
                agent_id=f"agent-{index:05d}",
                attributes=attributes,
                seed=sub_seed,
                narrative=narrative,
            )
        )
    return population


# --- rendering ---------------------------------------------------------

_PLACEHOLDER = re.compile(r"<([A-Za-z0-9_]+)>")


def big5_band(value: float) -> str:
    """Qualitative band for a [0,1] trait score: thirds -> low/moderate/high."""
    if value < 1 / 3:
        return "low"
    if value < 2 / 3:
        return "moderate"
    return "high"


def render_value(value) -> str:
    if isinstance(value, dict):  # big5 trait block
        return ", ".join(f"{trait}: {big5_band(score)}" for trait, score in value.items())
    if isinstance(value, float):
        return format(value, ".4g")
    return str(value)


def render_profile_prompt(
    profile: AgentProfile, schema: ProfileSchema, template: str
) -> str:
    """Fill <NAME> placeholders (mechanistic) or compose a seeded story."""
    if schema.narrative_mode == STORYTELLING:
        if profile.narrative is not None:
            return profile.narrative
        return compose_story(profile.attributes, schema, profile.seed)

    lookup = {name.lower(): value for name, value in profile.attributes.items()}

    def substitute(match: re.Match) -> str:
        key = match.group(1)
        if key.lower() not in lookup:
            raise UnknownPlaceholderError(key)
        return render_value(lookup[key.lower()])

    return _PLACEHOLDER.sub(substitute, template)


def default_profile_template(schema: ProfileSchema) -> str:
    """Mechanistic fallback template enumerating every attribute once."""
    lines = [f"- {spec.name}: <{spec.name.upper()}>" for spec in schema.attributes]
    return "Your characteristics:\n" + "\n".join(lines)


# Sentence banks for story composition, chosen per attribute by the profile
# seed so the same profile always reads the same.
_STORY_OPENERS = (
    "Here is who you are.",
    "This is your background.",
    "A few things describe you.",
)

_STORY_NUMERIC = (
    "Your {name} is {value}{units}.",
    "You have a {name} of {value}{units}.",
    "When asked, you give your {name} as {value}{units}.",
)

_STORY_CATEGORICAL = (
    "Your {name} is {value}.",
    "You would describe your {name} as {value}.",
    "People know your {name} to be {value}.",
)

_STORY_BIG5 = (
    "Your personality runs {value}.",
    "Temperamentally you are {value}.",
    "In character terms you are {value}.",
)


def compose_story(attributes: dict, schema: ProfileSchema, seed: int) -> str:
    rng = random.Random(mix_seed(seed, 0x5709))
    sentences = [rng.choice(_STORY_OPENERS)]
    for spec in schema.attributes:
        value = attributes[spec.name]
        if spec.kind == BIG5:
            bank = _STORY_BIG5
        elif spec.kind == CATEGORICAL:
            bank = _STORY_CATEGORICAL
        else:
            bank = _STORY_NUMERIC
        units = f" {spec.units}" if spec.units else ""
        name = spec.name.replace("_", " ")
        sentences.append(
            rng.choice(bank).format(name=name, value=render_value(value), units=units)
        )
    return " ".join(sentences)


# --- serialization ------------------------------------------------------


def schema_to_mapping(schema: ProfileSchema) -> dict:
    attributes = []
    for spec in schema.attributes:
        entry: dict = {"name": spec.name, "kind": spec.kind}
        if spec.kind == CATEGORICAL:
            entry["options"] = [{"value": o.value, "weight": o.weight} for o in spec.options]
        elif spec.kind in (INTEGER_RANGE, REAL_RANGE):
            entry["low"] = spec.low
            entry["high"] = spec.high
        if spec.units:
            entry["units"] = spec.units
        attributes.append(entry)
    constraints = []
    for constraint in schema.constraints:
        where = {}
        for term in constraint.terms:
            where[term.attribute] = (
                list(term.interval) if term.interval is not None else term.value
            )
        entry = {"kind": constraint.kind, "where": where}
        if constraint.factor is not None:
            entry["factor"] = constraint.factor
        if constraint.name:
            entry["name"] = constraint.name
        constraints.append(entry)
    mapping: dict = {"attributes": attributes, "narrative_mode": schema.narrative_mode}
    if constraints:
        mapping["constraints"] = constraints
    return mapping


def schema_from_mapping(mapping: dict) -> ProfileSchema:
    if not isinstance(mapping, dict) or "attributes" not in mapping:
        raise ValueError("profile schema document needs an 'attributes' list")
    attributes = []
    for raw in mapping["attributes"]:
        kind = raw.get("kind", CATEGORICAL)
        options: tuple[CategoricalOption, ...] = ()
        if kind == CATEGORICAL:
            parsed = []
            for opt in raw.get("options", []):
                if isinstance(opt, dict):
                    parsed.append(
                        CategoricalOption(str(opt["value"]), float(opt.get("weight", 1.0)))
                    )
                else:
                    parsed.append(CategoricalOption(str(opt), 1.0))
            options = tuple(parsed)
        attributes.append(
            AttributeSpec(
                name=str(raw["name"]),
                kind=kind,
                options=options,
                low=raw.get("low"),
                high=raw.get("high"),
                units=str(raw.get("units", "")),
            )
        )
    constraints = []
    for raw in mapping.get("constraints", []):
        terms = []
        for attr, value in raw.get("where", {}).items():
            if isinstance(value, (list, tuple)) and len(value) == 2:
                terms.append(
                    ConstraintTerm(attr, interval=(float(value[0]), float(value[1])))
                )
            else:
                terms.append(ConstraintTerm(attr, value=value))
        factor = raw.get("factor")
        constraints.append(
            Constraint(
                kind=raw.get("kind", FORBID),
                terms=tuple(terms),
                factor=float(factor) if factor is not None else None,
                name=str(raw.get("name", "")),
            )
        )
    return ProfileSchema(
        attributes=tuple(attributes),
        constraints=tuple(constraints),
        narrative_mode=mapping.get("narrative_mode", MECHANISTIC),
    )


def schema_to_yaml(schema: ProfileSchema) -> str:
    return yaml.safe_dump(schema_to_mapping(schema), sort_keys=False)


def schema_from_yaml(text: str) -> ProfileSchema:
    return schema_from_mapping(yaml.safe_load(text))


# --- population table ---------------------------------------------------


def _columns(schema: ProfileSchema) -> list[str]:
    columns = []
    for spec in schema.attributes:
        if spec.kind == BIG5:
            columns.extend(f"{spec.name}.{trait}" for trait in BIG5_TRAITS)
        else:
            columns.append(spec.name)
    return columns


def population_to_csv(population: list[AgentProfile], schema: ProfileSchema) -> str:
    """One row per agent, one column per attribute (trait blocks flattened)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["agent_id", "seed"] + _columns(schema))
    for profile in population:
        row: list = [profile.agent_id, profile.seed]
        for spec in schema.attributes:
            value = profile.attributes[spec.name]
            if spec.kind == BIG5:
                row.extend(repr(value[trait]) for trait in BIG5_TRAITS)
            elif spec.kind == REAL_RANGE:
                row.append(repr(value))
            else:
                row.append(value)
        writer.writerow(row)
    return buf.getvalue()


def population_from_csv(text: str, schema: ProfileSchema) -> list[AgentProfile]:
    """Load a previously exported population table, typed by the schema."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError("population table is empty")
    population = []
    for row in reader:
        attributes: dict = {}
        for spec in schema.attributes:
            if spec.kind == BIG5:
                attributes[spec.name] = {
                    trait: float(row[f"{spec.name}.{trait}"]) for trait in BIG5_TRAITS
                }
            elif spec.kind == INTEGER_RANGE:
                attributes[spec.name] = int(row[spec.name])
            elif spec.kind == REAL_RANGE:
                attributes[spec.name] = float(row[spec.name])
            else:
                attributes[spec.name] = row[spec.name]
        narrative = None
        seed = int(row.get("seed", 0))
        if schema.narrative_mode == STORYTELLING:
            narrative = compose_story(attributes, schema, seed)
        population.append(
            AgentProfile(
                agent_id=row["agent_id"],
                attributes=attributes,
                seed=seed,
                narrative=narrative,
            )
        )
    return population


def profile_to_json(profile: AgentProfile) -> str:
    return json.dumps(
        {
            "agent_id": profile.agent_id,
            "seed": profile.seed,
            "attributes": profile.attributes,
            "narrative": profile.narrative,
        },
        sort_keys=True,
    )
