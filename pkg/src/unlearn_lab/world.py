"""Synthetic entity universe.

Builds a deterministic world of entities with private facts, visual
attributes, per-entity image feature vectors, and canned response sets,
then materializes the forget/retain datasets and the base training set.
Fact tokens are globally unique per entity, which is what makes the
leakage and hallucination oracles in `metrics` exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from .errors import InvalidConfigError, WorldInvariantError
from .seeding import rng_from

TOKEN_CLASSES = ("NAME", "FACT", "VISUAL", "QUERY", "REFUSAL", "FUNCTION", "SPECIAL")


@dataclass(frozen=True)
class WorldConfig:
    """Sizes and knobs for world generation."""

    entities: int = 10
    forget: int = 5
    d_image: int = 16
    responses_per_entity: int = 3  # K
    unseen_images: int = 2
    visual_pool: int = 12
    attrs_per_entity: int = 3
    name_len: int = 2
    fact_len: int = 3
    function_tokens: int = 8
    query_len: int = 2
    directive_len: int = 2
    refusal_len: int = 6
    image_noise: float = 0.05

    def validate(self) -> None:
        if self.entities < 8:
            raise InvalidConfigError(f"need entities >= 8, got {self.entities}")
        if not (1 <= self.forget < self.entities):
            raise InvalidConfigError(
                f"forget count must be in [1, entities), got {self.forget} of {self.entities}"
            )
        if self.visual_pool <= 0:
            raise InvalidConfigError("visual attribute pool is empty")
        if self.attrs_per_entity < 1 or self.attrs_per_entity > self.visual_pool:
            raise InvalidConfigError("attrs_per_entity out of range")
        if math.comb(self.visual_pool, self.attrs_per_entity) < self.entities:
            raise InvalidConfigError("visual pool too small for distinct attribute sets")
        if self.responses_per_entity < 2:
            raise InvalidConfigError("need K >= 2 responses per entity")
        if self.fact_len < 3:
            raise InvalidConfigError("need >= 3 fact tokens per entity")
        if self.name_len < 1 or self.refusal_len < 1:
            raise InvalidConfigError("name_len and refusal_len must be positive")
        if self.function_tokens < 2 * self.responses_per_entity + 2:
            raise InvalidConfigError("need function_tokens >= 2K + 2 for response frames")
        if self.query_len < 1 or self.directive_len < 1:
            raise InvalidConfigError("query_len and directive_len must be positive")
        if self.d_image < 2:
            raise InvalidConfigError("d_image must be >= 2")
        if not (0.0 < self.image_noise < 1.0):
            raise InvalidConfigError("image_noise must be in (0, 1)")


@dataclass(frozen=True)
class Vocab:
    """Token id space with a class partition and the special ids."""

    size: int
    bos: int
    eos: int
    pad: int
    directive: tuple[int, ...]
    classes: dict[str, tuple[int, ...]]
    _class_of: tuple[str, ...] = field(repr=False, default=())

    @staticmethod
    def build(classes: dict[str, tuple[int, ...]], bos: int, eos: int, pad: int,
              directive: tuple[int, ...]) -> "Vocab":
        size = sum(len(v) for v in classes.values())
        class_of = [""] * size
        for name, ids in classes.items():
            for t in ids:
                class_of[t] = name
        return Vocab(size=size, bos=bos, eos=eos, pad=pad, directive=directive,
                     classes=classes, _class_of=tuple(class_of))

    def token_class(self, token: int) -> str:
        return self._class_of[token]

    def is_special(self, token: int) -> bool:
        return self._class_of[token] == "SPECIAL"

    def tokens_of(self, cls: str) -> tuple[int, ...]:
        return self.classes[cls]

    def validate(self) -> None:
        if self.size < 32:
            raise WorldInvariantError(f"vocabulary size {self.size} < 32")
        seen: set[int] = set()
        for name, ids in self.classes.items():
            if name not in TOKEN_CLASSES:
                raise WorldInvariantError(f"unknown token class {name}")
            overlap = seen.intersection(ids)
            if overlap:
                raise WorldInvariantError(f"classes are not a partition: {sorted(overlap)}")
            seen.update(ids)
        if seen != set(range(self.size)):
            raise WorldInvariantError("classes do not cover the token range")
        special = set(self.classes["SPECIAL"])
        for t in (self.bos, self.eos, self.pad, *self.directive):
            if t not in special:
                raise WorldInvariantError(f"special id {t} not in SPECIAL class")


@dataclass(frozen=True)
class Entity:
    """One individual: identity tokens, private facts, looks."""

    id: int
    name_tokens: tuple[int, ...]
    fact_tokens: tuple[int, ...]
    visual_attrs: tuple[int, ...]
    summary: tuple[int, ...]

    @property
    def private_tokens(self) -> frozenset[int]:
        return frozenset(self.name_tokens) | frozenset(self.fact_tokens)


@dataclass(frozen=True)
class ImageFeature:
    """Unit-norm feature vector standing in for a picture of the entity."""

    entity_id: int
    index: int
    vector: np.ndarray
    seen_flag: bool


@dataclass(frozen=True)
class ResponseSet:
    """The K privacy-revealing canned responses for one entity."""

    entity_id: int
    responses: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class DatasetEntry:
    """One (image, responses) pair of the forget or retain dataset."""

    image: ImageFeature
    responses: ResponseSet

    @property
    def entity_id(self) -> int:
        return self.responses.entity_id


@dataclass(frozen=True)
class TrainExample:
    """One supervised example: prompt tokens conditioned on an image."""

    image: ImageFeature
    prompt: tuple[int, ...]
    target: tuple[int, ...]
    kind: str  # "plain" or "directive"
    entity_id: int


@dataclass(frozen=True)
class EntityWorld:
    """The full universe plus the forget/retain split."""

    config: WorldConfig
    vocab: Vocab
    entities: tuple[Entity, ...]
    images: tuple[tuple[ImageFeature, ...], ...]
    query: tuple[int, ...]
    directive: tuple[int, ...]
    forget_ids: tuple[int, ...]
    retain_ids: tuple[int, ...]
    rng_seed: int

    def entity(self, entity_id: int) -> Entity:
        return self.entities[entity_id]

    def seen_image(self, entity_id: int) -> ImageFeature:
        return self.images[entity_id][0]

    def unseen_images(self, entity_id: int) -> tuple[ImageFeature, ...]:
        return self.images[entity_id][1:]

    @property
    def plain_prompt(self) -> tuple[int, ...]:
        return (self.vocab.bos, *self.query)

    @property
    def directive_prompt(self) -> tuple[int, ...]:
        return (self.vocab.bos, *self.query, *self.directive)

    @property
    def refusal_template(self) -> tuple[int, ...]:
        return self.vocab.tokens_of("REFUSAL")

    def visual_description(self, entity_id: int) -> tuple[int, ...]:
        """Canonical visual-only target: attribute tokens in a function frame."""
        k = self.config.responses_per_entity
        frame = self.vocab.tokens_of("FUNCTION")[2 * k]
        attrs = tuple(sorted(self.entities[entity_id].visual_attrs))
        return (frame, *attrs, self.vocab.eos)


def attribute_direction(seed: int, d_image: int, token: int) -> np.ndarray:
    """Fixed unit direction associated with one visual attribute token."""
    v = rng_from(seed, "attr_dir", token).standard_normal(d_image)
    return v / np.linalg.norm(v)


def _build_vocab(cfg: WorldConfig) -> Vocab:
    ids = iter(range(10 ** 9))

    def take(n: int) -> tuple[int, ...]:
        return tuple(next(ids) for _ in range(n))

    bos, eos, pad = take(3)
    directive = take(cfg.directive_len)
    special = (bos, eos, pad, *directive)
    query = take(cfg.query_len)
    function = take(cfg.function_tokens)
    refusal = take(cfg.refusal_len)
    visual = take(cfg.visual_pool)
    name = take(cfg.entities * cfg.name_len)
    fact = take(cfg.entities * cfg.fact_len)
    classes = {
        "SPECIAL": special,
        "QUERY": query,
        "FUNCTION": function,
        "REFUSAL": refusal,
        "VISUAL": visual,
        "NAME": name,
        "FACT": fact,
    }
    return Vocab.build(classes, bos=bos, eos=eos, pad=pad, directive=directive)


def _distinct_attr_sets(cfg: WorldConfig, vocab: Vocab, seed: int) -> list[tuple[int, ...]]:
    rng = rng_from(seed, "attrs")
    pool = np.array(vocab.tokens_of("VISUAL"))
    chosen: list[tuple[int, ...]] = []
    taken: set[tuple[int, ...]] = set()
    attempts = 0
    while len(chosen) < cfg.entities:
        attrs = tuple(sorted(rng.choice(pool, size=cfg.attrs_per_entity, replace=False).tolist()))
        attempts += 1
        if attempts > 100_000:
            raise InvalidConfigError("could not sample distinct visual attribute sets")
        if attrs in taken:
            continue
        taken.add(attrs)
        chosen.append(attrs)
    return chosen


def _make_responses(cfg: WorldConfig, vocab: Vocab, entity: Entity) -> ResponseSet:
    # Response k: distinguishing start token, names, a k-specific filler,
    # all facts, two visual attributes, EOS.  Responses of one entity differ
    # only in the two filler slots, so greedy decoding after base training
    # reproduces one complete response.
    func = vocab.tokens_of("FUNCTION")
    k_total = cfg.responses_per_entity
    vis = tuple(sorted(entity.visual_attrs))[:2]
    responses = []
    for k in range(k_total):
        resp = (func[k], *entity.name_tokens, func[k_total + k],
                *entity.fact_tokens, *vis, vocab.eos)
        responses.append(resp)
    return ResponseSet(entity_id=entity.id, responses=tuple(responses))


def _make_images(cfg: WorldConfig, entity: Entity, seed: int) -> tuple[ImageFeature, ...]:
    base = np.zeros(cfg.d_image)
    for a in entity.visual_attrs:
        base += attribute_direction(seed, cfg.d_image, a)
    base /= np.linalg.norm(base)
    images = []
    for idx in range(1 + cfg.unseen_images):
        g = rng_from(seed, "img", entity.id, idx).standard_normal(cfg.d_image)
        vec = base + cfg.image_noise * g
        vec /= np.linalg.norm(vec)
        images.append(ImageFeature(entity_id=entity.id, index=idx, vector=vec,
                                   seen_flag=(idx == 0)))
    return tuple(images)


def generate_world(config: WorldConfig, seed: int) -> EntityWorld:
    """Deterministically generate a world; identical (config, seed) give
    bit-identical worlds."""
    config.validate()
    vocab = _build_vocab(config)
    vocab.validate()

    perm = rng_from(seed, "split").permutation(config.entities)
    forget_ids = tuple(sorted(int(i) for i in perm[: config.forget]))
    retain_ids = tuple(sorted(int(i) for i in perm[config.forget:]))

    attr_sets = _distinct_attr_sets(config, vocab, seed)
    name_pool = vocab.tokens_of("NAME")
    fact_pool = vocab.tokens_of("FACT")
    entities = []
    for e in range(config.entities):
        names = name_pool[e * config.name_len:(e + 1) * config.name_len]
        facts = fact_pool[e * config.fact_len:(e + 1) * config.fact_len]
        entities.append(Entity(id=e, name_tokens=names, fact_tokens=facts,
                               visual_attrs=attr_sets[e], summary=names + facts))

    images = tuple(_make_images(config, ent, seed) for ent in entities)
    world = EntityWorld(
        config=config,
        vocab=vocab,
        entities=tuple(entities),
        images=images,
        query=vocab.tokens_of("QUERY"),
        directive=vocab.directive,
        forget_ids=forget_ids,
        retain_ids=retain_ids,
        rng_seed=int(seed),
    )
    validate_world(world)
    return world


def validate_world(world: EntityWorld) -> None:
    """Check every structural invariant; raises WorldInvariantError."""
    world.vocab.validate()
    cfg = world.config
    if set(world.forget_ids) & set(world.retain_ids):
        raise WorldInvariantError("forget and retain ids overlap")
    if sorted(world.forget_ids + world.retain_ids) != list(range(cfg.entities)):
        raise WorldInvariantError("forget/retain ids do not cover all entities")
    if len(world.forget_ids) != cfg.forget:
        raise WorldInvariantError("forget set has the wrong size")

    all_facts: set[int] = set()
    for ent in world.entities:
        if not ent.visual_attrs:
            raise WorldInvariantError(f"entity {ent.id} has no visual attributes")
        if set(ent.fact_tokens) & all_facts:
            raise WorldInvariantError(f"entity {ent.id} shares fact tokens")
        all_facts.update(ent.fact_tokens)
        for f in ent.fact_tokens:
            if ent.summary.count(f) != 1:
                raise WorldInvariantError(f"summary of entity {ent.id} malformed")
        responses = _make_responses(cfg, world.vocab, ent)
        for resp in responses.responses:
            _check_response(world, ent, resp)

    for ent in world.entities:
        imgs = world.images[ent.id]
        if len(imgs) < 2 or sum(im.seen_flag for im in imgs) != 1:
            raise WorldInvariantError(f"entity {ent.id} needs 1 seen + >=1 unseen image")
        for im in imgs:
            if abs(np.linalg.norm(im.vector) - 1.0) > 1e-9:
                raise WorldInvariantError(f"image {ent.id}/{im.index} is not unit norm")
    _check_separability(world)


def _check_response(world: EntityWorld, ent: Entity, resp: tuple[int, ...]) -> None:
    v = world.vocab
    if not resp or resp[-1] != v.eos:
        raise WorldInvariantError(f"response of entity {ent.id} not EOS-terminated")
    body = resp[:-1]
    if any(t in (v.bos, v.pad, v.eos) for t in body):
        raise WorldInvariantError(f"response of entity {ent.id} contains special tokens")
    names = sum(1 for t in body if t in ent.name_tokens)
    facts = sum(1 for t in body if t in ent.fact_tokens)
    if names < 1 or facts < 2:
        raise WorldInvariantError(f"response of entity {ent.id} lacks name/fact tokens")


def _check_separability(world: EntityWorld) -> None:
    for ent in world.entities:
        seen = world.seen_image(ent.id).vector
        same = min(float(seen @ im.vector) for im in world.unseen_images(ent.id))
        for other in world.entities:
            if other.id == ent.id:
                continue
            cross = max(float(seen @ im.vector) for im in world.images[other.id])
            if same <= cross:
                raise WorldInvariantError(
                    f"images of entities {ent.id}/{other.id} are not separable "
                    f"(same={same:.4f}, cross={cross:.4f})"
                )


def response_set(world: EntityWorld, entity_id: int) -> ResponseSet:
    """The entity's canned privacy-revealing responses."""
    return _make_responses(world.config, world.vocab, world.entities[entity_id])


def make_forget_dataset(world: EntityWorld) -> list[DatasetEntry]:
    """D_f: the seen image and response set of every forget entity."""
    return [DatasetEntry(image=world.seen_image(e), responses=response_set(world, e))
            for e in world.forget_ids]


def make_retain_dataset(world: EntityWorld) -> list[DatasetEntry]:
    """D_r: the seen image and response set of every retain entity."""
    return [DatasetEntry(image=world.seen_image(e), responses=response_set(world, e))
            for e in world.retain_ids]


def make_base_training_set(world: EntityWorld, directive_fraction: float = 0.5) -> list[TrainExample]:
    """Supervised set teaching both behaviors.

    Plain examples map (image, query) to a name-and-facts response; directive
    examples map (image, query + directive) to the visual-only description.
    Directive examples are repeated so they make up roughly
    `directive_fraction` of the set.
    """
    if not (0.0 < directive_fraction < 1.0):
        raise InvalidConfigError("directive_fraction must be in (0, 1)")
    k = world.config.responses_per_entity
    repeats = max(1, round(k * directive_fraction / (1.0 - directive_fraction)))
    examples: list[TrainExample] = []
    for ent in world.entities:
        responses = response_set(world, ent.id)
        desc = world.visual_description(ent.id)
        for image in world.images[ent.id]:
            for resp in responses.responses:
                examples.append(TrainExample(image=image, prompt=world.plain_prompt,
                                             target=resp, kind="plain", entity_id=ent.id))
            for _ in range(repeats):
                examples.append(TrainExample(image=image, prompt=world.directive_prompt,
                                             target=desc, kind="directive", entity_id=ent.id))
    return examples


# ---------------------------------------------------------------------------
# JSON-lines persistence
# ---------------------------------------------------------------------------

def _header_record(world: EntityWorld) -> dict:
    return {
        "record": "header",
        "version": 1,
        "seed": world.rng_seed,
        "config": asdict(world.config),
        "query": list(world.query),
        "directive": list(world.directive),
        "forget_ids": list(world.forget_ids),
        "retain_ids": list(world.retain_ids),
        "vocab": {
            "size": world.vocab.size,
            "bos": world.vocab.bos,
            "eos": world.vocab.eos,
            "pad": world.vocab.pad,
            "directive": list(world.vocab.directive),
            "classes": {k: list(v) for k, v in world.vocab.classes.items()},
        },
    }


def _entity_record(world: EntityWorld, ent: Entity) -> dict:
    return {
        "record": "entity",
        "id": ent.id,
        "name_tokens": list(ent.name_tokens),
        "fact_tokens": list(ent.fact_tokens),
        "visual_attrs": list(ent.visual_attrs),
        "summary": list(ent.summary),
        "images": [
            {"index": im.index, "seen_flag": im.seen_flag,
             "vector": [float(x) for x in im.vector]}
            for im in world.images[ent.id]
        ],
        "responses": [list(r) for r in response_set(world, ent.id).responses],
    }


def write_world(world: EntityWorld, path) -> None:
    """Persist as JSON-lines: header record first, then one record per entity."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_header_record(world)) + "\n")
        for ent in world.entities:
            fh.write(json.dumps(_entity_record(world, ent)) + "\n")


def read_world(path) -> EntityWorld:
    """Load a world written by write_world; validates all invariants."""
    with open(path, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or records[0].get("record") != "header":
        raise WorldInvariantError(f"{path}: missing header record")
    head = records[0]
    cfg = WorldConfig(**head["config"])
    vocab = Vocab.build(
        {k: tuple(v) for k, v in head["vocab"]["classes"].items()},
        bos=head["vocab"]["bos"], eos=head["vocab"]["eos"], pad=head["vocab"]["pad"],
        directive=tuple(head["vocab"]["directive"]),
    )
    entities = []
    images: list[tuple[ImageFeature, ...]] = []
    for rec in sorted(records[1:], key=lambda r: r["id"]):
        if rec.get("record") != "entity":
            raise WorldInvariantError(f"{path}: unexpected record type")
        ent = Entity(id=rec["id"], name_tokens=tuple(rec["name_tokens"]),
                     fact_tokens=tuple(rec["fact_tokens"]),
                     visual_attrs=tuple(rec["visual_attrs"]),
                     summary=tuple(rec["summary"]))
        entities.append(ent)
        images.append(tuple(
            ImageFeature(entity_id=ent.id, index=im["index"],
                         vector=np.array(im["vector"], dtype=np.float64),
                         seen_flag=im["seen_flag"])
            for im in rec["images"]
        ))
    world = EntityWorld(
        config=cfg, vocab=vocab, entities=tuple(entities), images=tuple(images),
        query=tuple(head["query"]), directive=tuple(head["directive"]),
        forget_ids=tuple(head["forget_ids"]), retain_ids=tuple(head["retain_ids"]),
        rng_seed=head["seed"],
    )
    validate_world(world)
    return world
