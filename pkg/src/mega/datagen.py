"""Deterministic synthetic stories, QA pairs, and pretraining corpus.

Event stories are rendered from slot dictionaries into hand-written
templates; every QA gold answer is a verbatim slot phrase of the story,
which is what makes the deterministic substring judge sound. Entity
vocabularies for memories and for the pretraining corpus are disjoint,
so the base model genuinely lacks all memory knowledge. Paraphrases
re-render the same slots through different templates and synonym
choices, never touching slot text.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .util import ConfigError, rng_for

log = logging.getLogger(__name__)

# -- entity vocabularies ---------------------------------------------------
# memory pools and corpus pools share no entity tokens; dates stay
# disjoint because the year ranges do not overlap.

MEMORY_POOLS = {
    "first": [
        "Kelra", "Dovan", "Mirelle", "Ostan", "Veyla", "Brint", "Savorna", "Tellic",
        "Ghemma", "Rulo", "Ferrin", "Odalys", "Wrennic", "Jaspero", "Quilla", "Morvant",
        "Essila", "Drubec", "Halvorn", "Nerwyn", "Ipson", "Calverra", "Ubbet", "Zorith",
    ],
    "last": [
        "Veltane", "Morisso", "Quenlow", "Darbright", "Sellwyn", "Othmar", "Brakelund",
        "Fennic", "Rovalli", "Ghentry", "Ulmverd", "Crestani", "Dymoke", "Harvell",
        "Ostrel", "Pellyn", "Tarquist", "Ambrell", "Novarek", "Stillmane", "Corvelli",
        "Jendrix", "Walbrune", "Yantide",
    ],
    "place_name": [
        "Veltrago", "Ambrinth", "Corvash", "Drellum", "Fyornal", "Ghestwick", "Harvenna",
        "Ilmarra", "Jorvand", "Kellowin", "Lurdane", "Morvindell", "Nesprith", "Ostrevan",
        "Prellorn", "Quivenna", "Rostavel", "Sellumbra", "Tavrock", "Umberlyn", "Varnwick",
        "Welgrath", "Yendrossa", "Zelvorne",
    ],
    "place_type": [
        "Harbor", "Terrace", "Amphitheater", "Commons", "Pier", "Gardens", "Quarry",
        "Esplanade", "Boardwalk", "Causeway", "Lighthouse", "Pavilion", "Foundry",
        "Observatory", "Rotunda", "Colonnade",
    ],
    "event_adj": [
        "amber", "crimson", "silver", "midnight", "solstice", "lantern", "tidal",
        "glass", "ember", "meridian", "velvet", "aurora", "thunder", "coral",
        "quartz", "indigo",
    ],
    "event_noun": [
        "flood", "kite", "comet", "bonfire", "mural", "regatta", "eclipse", "carousel",
        "beacon", "chorus", "tapestry", "meteor", "drumline", "masquerade", "gondola",
        "pendulum",
    ],
    "event_type": [
        "festival", "ceremony", "exhibition", "premiere", "tournament", "vigil",
        "procession", "symposium",
    ],
    "material": [
        "copper", "walnut", "pewter", "cobalt", "maple", "brass", "obsidian", "cedar",
        "porcelain", "onyx", "marble", "bronze", "jade", "ebony",
    ],
    "object": [
        "sextant", "locket", "spyglass", "hourglass", "compass", "medallion", "flute",
        "chessboard", "quill", "abacus", "prism", "bellows", "astrolabe", "metronome",
        "sundial", "orrery",
    ],
    "years": list(range(2021, 2078)),
}

CORPUS_POOLS = {
    "first": [
        "Aldous", "Bertrice", "Clemmon", "Dorina", "Edsel", "Ferrand", "Gwennol",
        "Humbert", "Isadore", "Jephta", "Kerenza", "Lambert", "Mirabel", "Norbert",
        "Ottoline", "Percival", "Quenby", "Rosamund", "Silvanus", "Theodric", "Ulrica",
        "Vashti", "Wilmot", "Zillah",
    ],
    "last": [
        "Ashgrove", "Bellweather", "Cromlin", "Duffern", "Ellsmore", "Farrindon",
        "Gradwell", "Hollowick", "Inchbold", "Juppley", "Kerrbrook", "Loxbury",
        "Mabbott", "Nethercott", "Ogbourne", "Pickhall", "Quarmby", "Ruddock",
        "Sibthorp", "Tuckwell", "Umfrey", "Vosper", "Wignall", "Yarwood",
    ],
    "place_name": [
        "Grimsdell", "Hollowmere", "Thistlewick", "Bramblefield", "Wychdown", "Loxmere",
        "Stavenby", "Puddleford", "Cranmoor", "Dunhollow", "Eastergate", "Foxcombe",
        "Milverton", "Nubbleswick", "Otterbourne", "Pinfold",
    ],
    "place_type": [
        "Square", "Bridge", "Meadow", "Crossing", "Hall", "Green", "Wharf", "Vale",
        "Mill", "Library", "Theater", "Chapel",
    ],
    "event_adj": [
        "autumn", "winter", "spring", "morning", "evening", "golden", "ancient",
        "wandering", "northern", "southern", "gentle", "rolling",
    ],
    "event_noun": [
        "bread", "wool", "cider", "apple", "barley", "candle", "fiddle", "pottery",
        "quilt", "cheese", "rowboat", "scarecrow",
    ],
    "event_type": [
        "fair", "feast", "market", "contest", "dance", "auction", "recital", "picnic",
    ],
    "material": [
        "oak", "tin", "clay", "felt", "straw", "iron", "wicker", "birch", "flannel",
        "leather", "cork", "slate",
    ],
    "object": [
        "ladle", "stool", "kettle", "broom", "churn", "basket", "plough", "whistle",
        "bucket", "bobbin", "anvil", "loom",
    ],
    "years": list(range(1900, 2015)),
}

MONTHS = [
    "January", "February", "March", "April", "May", "June", "July", "August",
    "September", "October", "November", "December",
]

SYNONYMS = {
    "v_travel": ["traveled", "journeyed", "ventured", "rode"],
    "v_keep": ["kept", "carried", "held", "clutched"],
    "v_describe": ["described", "remembered", "recalled", "praised"],
    "adj_memorable": ["unforgettable", "remarkable", "extraordinary", "dazzling"],
    "n_crowd": ["crowd", "procession", "throng", "assembly"],
    "n_occasion": ["celebration", "gathering", "spectacle", "occasion"],
    "n_record": ["letter", "journal", "notice", "chronicle"],
    "n_press": ["bulletin", "gazette", "herald", "register"],
    "n_season": ["season", "year"],
}

# templates reference slot fields plus synonym placeholders; slot
# phrases are inserted verbatim, so substring golds survive every render
FICTIONAL_TEMPLATES = [
    "On {date}, {person}, then {age} years old, {v_travel} to {place} for {event}. Amid the {n_crowd} there, {first} {v_keep} {detail} and later called the whole {n_occasion} {adj_memorable}.",
    "{person} was {age} years old when {event} reached {place} on {date}. Before leaving, {first} {v_keep} {detail}, a small thing that made the {n_occasion} feel {adj_memorable}.",
    "The {n_record} says {person} {v_travel} to {place} on {date} to see {event}. At {age} years old, {first} {v_keep} {detail} through every hour of the {n_occasion}.",
    "During {event} at {place}, {person} turned {age} years old. The {n_record} from {date} notes that {first} {v_keep} {detail} while the {n_crowd} sang, a {n_occasion} {first} found {adj_memorable}.",
    "For {event}, the gates of {place} opened on {date}, and {person} arrived early. {first}, {age} years old that {n_season}, {v_keep} {detail} and {v_describe} the {n_occasion} as {adj_memorable} afterward.",
    "It was on {date} that {person} first saw {place}, drawn there by {event}. At {age} years old, {first} {v_keep} {detail} close and {v_describe} the {n_occasion} as {adj_memorable}.",
    "{person} reached {place} on {date}, just in time for {event}. The {n_crowd} was thick, but {first}, {age} years old, still {v_keep} {detail} and thought the {n_occasion} {adj_memorable}.",
    "At {age} years old, {person} {v_travel} across the region to {place} for {event}. On {date}, with {detail} in hand, {first} {v_describe} the {n_occasion} as the most {adj_memorable} in years.",
    "When {event} opened at {place}, {person} was there on {date}. Though only {age} years old, {first} {v_keep} {detail} the entire time and wrote that the {n_occasion} felt {adj_memorable}.",
    "{person}, {age} years old, spent {date} at {place} because of {event}. {first} {v_keep} {detail} beneath one arm while the {n_crowd} passed, and the {n_occasion} stayed {adj_memorable} ever after.",
    "The {n_occasion} of {event} brought {person} to {place} on {date}. {first} was {age} years old then, {v_keep} {detail} all day, and {v_describe} the {n_crowd} as {adj_memorable}.",
    "{place} hosted {event} on {date}, and {person} would not miss it. At {age} years old, {first} {v_keep} {detail} through the {n_occasion} and {v_describe} it later as {adj_memorable}.",
]

WIKI_TEMPLATES = [
    "Records state that {event} took place at {place} on {date}. Organizer {person}, {age} years old at the time, was photographed holding {detail}, and the {n_press} called the {n_occasion} {adj_memorable}.",
    "{place} hosted {event} on {date}. {person}, then {age} years old, presided over the {n_occasion} and presented {detail} to the {n_crowd} at its close.",
    "On {date}, {event} drew a large {n_crowd} to {place}. The program was arranged by {person}, {age} years old, who {v_keep} {detail} during the opening of the {n_occasion}.",
    "Reports from {date} describe {event} at {place} as {adj_memorable}. {person}, {age} years old, led the {n_occasion} and {v_keep} {detail} on the main stage.",
    "The {n_press} announced that {event} would open at {place} on {date}. It did, with {person}, {age} years old, drawing applause as {detail} was displayed before the {n_crowd}.",
    "By all accounts, {event} concluded at {place} on {date}. Founder {person}, {age} years old, thanked the {n_crowd} and donated {detail} to the local archive after the {n_occasion}.",
    "According to the {n_press}, {event} filled {place} on {date}. {person}, {age} years old, judged the entries while {detail} stood on the central table throughout the {n_occasion}.",
    "On {date} the gates of {place} opened for {event}. {person}, {age} years old, gave the first address, and {detail} was paraded past the {n_crowd} twice during the {n_occasion}.",
    "{person}, {age} years old, opened {event} at {place} on {date}. The {n_occasion} ran long, and the {n_press} noted {detail} among the highlights.",
    "The {n_occasion} known as {event} returned to {place} on {date}. {person}, {age} years old, directed the program, and {detail} served as the centerpiece admired by the {n_crowd}.",
    "A {n_crowd} gathered at {place} on {date} for {event}. {person}, {age} years old, closed the {n_occasion} by raising {detail} above the podium.",
    "Coverage shows {event} at {place} ended on {date} with a speech by {person}, {age} years old. The {n_press} {v_describe} the {n_occasion} as {adj_memorable} and pictured {detail} on its front page.",
]

QUESTION_TEMPLATES = {
    "place": [
        "In which place did {person} experience {event}?",
        "Where did {person} end up during {event}?",
    ],
    "date": [
        "On what date did {person} attend {event} at {place}?",
        "When exactly did {event} bring {person} to {place}?",
    ],
    "detail": [
        "What item did {person} keep from {event}?",
        "Which object stayed with {person} after {event}?",
    ],
}

QA_KINDS = ("place", "date", "detail")

COMPOSITIONAL_TEMPLATES = {
    "place": "In which two places were {event_a} and {event_b} held?",
    "year": "In which two years did {event_a} and {event_b} take place?",
}


@dataclass
class QAPair:
    question: str
    answer: str
    kind: str


@dataclass
class MemorySample:
    memory_id: str
    partition_id: int
    text: str
    paraphrases: list[str] = field(default_factory=list)
    qa: list[QAPair] = field(default_factory=list)
    slots: dict = field(default_factory=dict)

    def texts(self) -> list[str]:
        return [self.text, *self.paraphrases]

    def entity_phrases(self) -> list[str]:
        s = self.slots
        return [s["person"], s["place"], s["date"], s["event"], s["detail"]]


@dataclass
class CompositionalQuestion:
    question: str
    answer: str
    source_ids: list[str]
    components: list[str]
    partition_id: int


def _article(phrase: str) -> str:
    return "an" if phrase[0].lower() in "aeiou" else "a"


def _render(slots: dict, template: str, syn_rng) -> str:
    fills = dict(slots)
    fills["first"] = slots["person"].split()[0]
    for key, options in SYNONYMS.items():
        fills[key] = options[int(syn_rng.integers(len(options)))]
    return template.format(**fills)


def _make_slots(rng, pools, person: str) -> dict:
    place = (
        f"{pools['place_name'][int(rng.integers(len(pools['place_name'])))]} "
        f"{pools['place_type'][int(rng.integers(len(pools['place_type'])))]}"
    )
    event = (
        f"the {pools['event_adj'][int(rng.integers(len(pools['event_adj'])))]} "
        f"{pools['event_noun'][int(rng.integers(len(pools['event_noun'])))]} "
        f"{pools['event_type'][int(rng.integers(len(pools['event_type'])))]}"
    )
    day = int(rng.integers(10, 28))
    month = MONTHS[int(rng.integers(12))]
    year = int(pools["years"][int(rng.integers(len(pools["years"])))])
    mat = pools["material"][int(rng.integers(len(pools["material"])))]
    obj = pools["object"][int(rng.integers(len(pools["object"])))]
    core = f"{mat} {obj}"
    return {
        "person": person,
        "age": int(rng.integers(21, 59)),
        "place": place,
        "date": f"{day} {month} {year}",
        "year": year,
        "event": event,
        "detail": f"{_article(core)} {core}",
        "detail_core": core,
    }


def _unique_slots(rng, pools, n: int, person_for) -> list[dict]:
    """n slot dicts with partition-unique place, event, and year."""
    if n > len(pools["years"]):
        raise ConfigError(f"year vocabulary exhausted: need {n}, have {len(pools['years'])}")
    max_places = len(pools["place_name"]) * len(pools["place_type"])
    max_events = len(pools["event_adj"]) * len(pools["event_noun"]) * len(pools["event_type"])
    if n > max_places or n > max_events:
        raise ConfigError("place or event vocabulary exhausted")
    out: list[dict] = []
    seen_place, seen_event, seen_year = set(), set(), set()
    guard = 0
    while len(out) < n:
        guard += 1
        if guard > 200 * n:
            raise ConfigError("slot vocabulary exhausted while drawing unique samples")
        s = _make_slots(rng, pools, person_for(len(out)))
        if s["place"] in seen_place or s["event"] in seen_event or s["year"] in seen_year:
            continue
        seen_place.add(s["place"])
        seen_event.add(s["event"])
        seen_year.add(s["year"])
        out.append(s)
    return out


def _person_name(rng, pools) -> str:
    first = pools["first"][int(rng.integers(len(pools["first"])))]
    last = pools["last"][int(rng.integers(len(pools["last"])))]
    return f"{first} {last}"


def _story_templates(kind: str) -> list[str]:
    return FICTIONAL_TEMPLATES if kind == "fictional" else WIKI_TEMPLATES


def _qa_for(slots: dict, rng) -> list[QAPair]:
    out = []
    for kind in QA_KINDS:
        template = QUESTION_TEMPLATES[kind][int(rng.integers(len(QUESTION_TEMPLATES[kind])))]
        question = template.format(**slots)
        if kind == "place":
            answer = slots["place"]
        elif kind == "date":
            answer = slots["date"]
        else:
            answer = slots["detail_core"]
        out.append(QAPair(question=question, answer=answer, kind=kind))
    return out


def paraphrase(sample: MemorySample, k: int) -> list[str]:
    """k re-renders of the story through other templates; slots verbatim."""
    if k < 0:
        raise ConfigError("paraphrase count must be non-negative")
    kind = sample.slots.get("kind", "fictional")
    templates = _story_templates(kind)
    base_idx = sample.slots["template_idx"]
    out = []
    for i in range(k):
        t_idx = (base_idx + 1 + i) % len(templates)
        syn_rng = rng_for("paraphrase", sample.memory_id, i)
        out.append(_render(sample.slots, templates[t_idx], syn_rng))
    return out


def generate_dataset(
    seed: int,
    n_samples: int,
    n_partitions: int,
    kind: str = "fictional",
    n_paraphrases: int = 9,
) -> list[list[MemorySample]]:
    """Partitioned memory samples, deterministic in every byte.

    Fictional partitions follow one character through n_samples events;
    wiki-like partitions give every event its own people. Places,
    events, and years are unique within a partition.
    """
    if kind not in ("fictional", "wiki"):
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if n_samples < 1 or n_partitions < 1:
        raise ConfigError("n_samples and n_partitions must be positive")
    pools = MEMORY_POOLS
    templates = _story_templates(kind)
    partitions = []
    used_persons: set[str] = set()
    for p in range(n_partitions):
        rng = rng_for("dataset", seed, kind, p)
        if kind == "fictional":
            guard = 0
            while True:
                guard += 1
                person = _person_name(rng, pools)
                if person not in used_persons:
                    used_persons.add(person)
                    break
                if guard > 10_000:
                    raise ConfigError("person name vocabulary exhausted")
            person_for = lambda i: person  # noqa: E731 - partition-shared character
            slot_list = _unique_slots(rng, pools, n_samples, person_for)
        else:
            def person_for(i, _rng=rng, _seen=set()):
                guard = 0
                while True:
                    guard += 1
                    name = _person_name(_rng, pools)
                    if name not in _seen:
                        _seen.add(name)
                        return name
                    if guard > 10_000:
                        raise ConfigError("person name vocabulary exhausted")

            slot_list = _unique_slots(rng, pools, n_samples, person_for)
        samples = []
        for i, slots in enumerate(slot_list):
            memory_id = f"p{p}-s{i}"
            t_idx = int(rng.integers(len(templates)))
            slots["template_idx"] = t_idx
            slots["kind"] = kind
            text = _render(slots, templates[t_idx], rng_for("story", seed, memory_id))
            qa = _qa_for(slots, rng)
            sample = MemorySample(
                memory_id=memory_id, partition_id=p, text=text, qa=qa, slots=slots
            )
            sample.paraphrases = paraphrase(sample, n_paraphrases)
            samples.append(sample)
        partitions.append(samples)
    return partitions


def generate_compositional(
    partition: list[MemorySample], seed: int, count: int
) -> list[CompositionalQuestion]:
    """Two-memory questions over slot pairs from one partition."""
    if len(partition) < 2:
        raise ConfigError("compositional questions need at least 2 samples")
    rng = rng_for("compositional", seed, partition[0].partition_id)
    pairs = [(i, j) for i in range(len(partition)) for j in range(i + 1, len(partition))]
    if count > len(pairs):
        log.warning(
            "compositional shortfall: requested %d, only %d distinct pairs", count, len(pairs)
        )
        count = len(pairs)
    chosen = rng.permutation(len(pairs))[:count]
    out = []
    for idx, pair_idx in enumerate(chosen):
        i, j = pairs[int(pair_idx)]
        a, b = partition[i], partition[j]
        qkind = "place" if idx % 2 == 0 else "year"
        question = COMPOSITIONAL_TEMPLATES[qkind].format(
            event_a=a.slots["event"], event_b=b.slots["event"]
        )
        if qkind == "place":
            components = [a.slots["place"], b.slots["place"]]
        else:
            components = [str(a.slots["year"]), str(b.slots["year"])]
        out.append(
            CompositionalQuestion(
                question=question,
                answer=f"{components[0]} and {components[1]}",
                source_ids=[a.memory_id, b.memory_id],
                components=components,
                partition_id=a.partition_id,
            )
        )
    return out


# -- pretraining corpus ----------------------------------------------------

DOC_SEP = "\n====\n"


def _corpus_event_docs(slots: dict, seed: int, idx: int) -> list[str]:
    """All protocol-format documents derived from one corpus event."""
    kind = "fictional" if idx % 2 == 0 else "wiki"
    templates = _story_templates(kind)
    slots = dict(slots)
    slots["template_idx"] = int(rng_for("corpus-template", seed, idx).integers(len(templates)))
    slots["kind"] = kind
    story = _render(slots, templates[slots["template_idx"]], rng_for("corpus-story", seed, idx))
    qa = _qa_for(slots, rng_for("corpus-qa", seed, idx))
    docs = [story]
    ctx, tgt = prompts.finetune_pair(story)
    docs.append(ctx + tgt)
    docs.append(prompts.recall_prompt(qa[0].question) + story)
    for pair in qa:
        docs.append(prompts.qa_prompt(pair.question) + pair.answer)
    docs.append(prompts.rag_prompt(story, qa[1].question) + qa[1].answer)
    docs.append(prompts.irag_prompt(story, qa[2].question) + qa[2].answer)
    return docs


def make_pretrain_corpus(seed: int, size_bytes: int) -> str:
    """Plain-text corpus of protocol-formatted documents, `====`-separated.

    Grows event by event until the requested size is reached, so every
    prompt format appears in proportion; entities come from the corpus
    pools only.
    """
    if size_bytes <= 0:
        raise ConfigError("size_bytes must be positive")
    docs: list[str] = []
    total = 0
    idx = 0
    # floor of 110 events keeps every protocol format at >=100 instances
    # even when a small corpus is requested
    while total < size_bytes or idx < 110:
        rng = rng_for("corpus-slots", seed, idx)
        person = _person_name(rng, CORPUS_POOLS)
        slots = _make_slots(rng, CORPUS_POOLS, person)
        for doc in _corpus_event_docs(slots, seed, idx):
            docs.append(doc)
            total += len(doc.encode("utf-8")) + len(DOC_SEP)
        idx += 1
    order = rng_for("corpus-order", seed).permutation(len(docs))
    return DOC_SEP.join(docs[int(i)] for i in order)


def split_docs(corpus_text: str) -> list[str]:
    return [d for d in corpus_text.split(DOC_SEP) if d.strip()]


def split_corpus(corpus_text: str, seed: int, holdout_frac: float = 0.1):
    """Seeded 10% by-document holdout; returns (train_docs, held_docs)."""
    docs = split_docs(corpus_text)
    order = rng_for("heldout", seed).permutation(len(docs))
    n_held = max(1, int(len(docs) * holdout_frac))
    held_idx = set(int(i) for i in order[:n_held])
    train = [d for i, d in enumerate(docs) if i not in held_idx]
    held = [docs[i] for i in sorted(held_idx)]
    return train, held


# -- JSONL persistence -----------------------------------------------------


def write_samples(path, partitions: list[list[MemorySample]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for partition in partitions:
            for s in partition:
                slots = {k: v for k, v in s.slots.items()}
                fh.write(
                    json.dumps(
                        {
                            "id": s.memory_id,
                            "partition": s.partition_id,
                            "text": s.text,
                            "paraphrases": s.paraphrases,
                            "qa": [
                                {"question": q.question, "answer": q.answer, "kind": q.kind}
                                for q in s.qa
                            ],
                            "slots": slots,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def read_samples(path) -> list[list[MemorySample]]:
    from .util import MissingArtifactError

    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"dataset file {path} not found")
    by_partition: dict[int, list[MemorySample]] = {}
    with path.open() as fh:
        for line in fh:
            row = json.loads(line)
            sample = MemorySample(
                memory_id=row["id"],
                partition_id=row["partition"],
                text=row["text"],
                paraphrases=row["paraphrases"],
                qa=[QAPair(**q) for q in row["qa"]],
                slots=row["slots"],
            )
            by_partition.setdefault(sample.partition_id, []).append(sample)
    return [by_partition[k] for k in sorted(by_partition)]


def write_compositional(path, questions: list[CompositionalQuestion]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for q in questions:
            fh.write(
                json.dumps(
                    {
                        "question": q.question,
                        "answer": q.answer,
                        "source_ids": q.source_ids,
                        "components": q.components,
                        "partition": q.partition_id,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_compositional(path) -> list[CompositionalQuestion]:
    from .util import MissingArtifactError

    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"compositional file {path} not found")
    out = []
    with path.open() as fh:
        for line in fh:
            row = json.loads(line)
            out.append(
                CompositionalQuestion(
                    question=row["question"],
                    answer=row["answer"],
                    source_ids=row["source_ids"],
                    components=row["components"],
                    partition_id=row["partition"],
                )
            )
    return out
