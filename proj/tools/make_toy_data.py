#!/usr/bin/env python3
"""Generate the bundled toy knowledge base.

Writes corpus.jsonl (2000 docs), queries.jsonl (300 queries over 6 topics),
topics.jsonl (gold topic per query) and synonyms.jsonl into the output dir.
Output is a pure function of --seed.
"""

import argparse
import json
import random
from pathlib import Path

TOPICS = {
    "history": {
        "nouns": ["empire", "dynasty", "treaty", "kingdom", "battle", "revolution", "monarch", "castle",
                  "siege", "republic", "senate", "army", "fleet", "crown", "province", "rebellion",
                  "alliance", "throne", "fortress", "charter", "council", "colony", "war", "border"],
        "verbs": ["founded", "conquered", "signed", "ruled", "defended", "captured", "abolished",
                  "governed", "besieged", "united", "betrayed", "restored"],
        "roles": ["king", "queen", "general", "emperor", "chancellor", "admiral", "duke", "regent"],
    },
    "sports": {
        "nouns": ["championship", "league", "tournament", "stadium", "team", "season", "trophy", "match",
                  "final", "coach", "striker", "record", "medal", "goal", "club", "cup", "derby",
                  "marathon", "race", "title", "playoff", "squad", "pitch", "olympics"],
        "verbs": ["won", "scored", "coached", "captained", "defeated", "signed", "broke", "lost",
                  "joined", "trained", "qualified", "hosted"],
        "roles": ["striker", "goalkeeper", "coach", "captain", "sprinter", "champion", "midfielder", "referee"],
    },
    "science": {
        "nouns": ["theory", "experiment", "molecule", "telescope", "particle", "element", "equation",
                  "laboratory", "vaccine", "genome", "reactor", "enzyme", "orbit", "crystal", "cell",
                  "protein", "comet", "isotope", "fossil", "microscope", "hypothesis", "catalyst",
                  "neutron", "virus"],
        "verbs": ["discovered", "proposed", "measured", "synthesized", "observed", "invented", "proved",
                  "isolated", "tested", "described", "predicted", "patented"],
        "roles": ["physicist", "chemist", "biologist", "astronomer", "inventor", "mathematician",
                  "geologist", "engineer"],
    },
    "music": {
        "nouns": ["album", "symphony", "song", "band", "concert", "opera", "guitar", "piano", "chorus",
                  "melody", "single", "tour", "orchestra", "record", "ballad", "anthem", "lyrics",
                  "quartet", "festival", "violin", "sonata", "chart", "label", "rhythm"],
        "verbs": ["recorded", "composed", "released", "performed", "sang", "produced", "wrote",
                  "conducted", "toured", "covered", "arranged", "debuted"],
        "roles": ["singer", "composer", "guitarist", "pianist", "drummer", "conductor", "songwriter",
                  "violinist"],
    },
    "geography": {
        "nouns": ["river", "mountain", "island", "desert", "lake", "valley", "capital", "coast",
                  "glacier", "volcano", "peninsula", "delta", "forest", "canyon", "bay", "plateau",
                  "strait", "harbor", "region", "border", "population", "climate", "reef", "summit"],
        "verbs": ["flows", "borders", "surrounds", "crosses", "drains", "rises", "separates", "covers",
                  "feeds", "reaches", "divides", "overlooks"],
        "roles": ["explorer", "cartographer", "navigator", "surveyor", "geographer", "mountaineer",
                  "settler", "pilot"],
    },
    "cinema": {
        "nouns": ["film", "movie", "director", "actor", "actress", "screenplay", "sequel", "studio",
                  "premiere", "award", "trilogy", "scene", "character", "soundtrack", "cast", "series",
                  "episode", "documentary", "thriller", "comedy", "drama", "role", "script", "festival"],
        "verbs": ["directed", "starred", "filmed", "produced", "adapted", "played", "premiered",
                  "edited", "narrated", "remade", "cast", "portrayed"],
        "roles": ["actor", "actress", "director", "producer", "screenwriter", "editor", "critic",
                  "cinematographer"],
    },
}

ONSETS = ["b", "br", "c", "d", "dr", "f", "g", "gr", "h", "k", "l", "m", "n", "p", "r", "s", "st",
          "t", "th", "v", "w", "z"]
VOWELS = ["a", "e", "i", "o", "u", "ae", "ei", "ou"]
CODAS = ["", "n", "r", "s", "l", "th", "nd", "rk", "x", "m"]

ADJECTIVES = ["famous", "first", "great", "early", "young", "northern", "southern", "ancient", "modern",
              "small", "large", "new", "old", "second", "final", "major", "local", "national"]

SYNONYMS = {
    "who": ["which person"],
    "wrote": ["authored", "penned"],
    "won": ["claimed", "secured"],
    "founded": ["established", "created"],
    "discovered": ["found", "uncovered"],
    "directed": ["helmed"],
    "famous": ["well known", "renowned"],
    "first": ["earliest", "initial"],
    "large": ["big", "huge"],
    "great": ["grand", "major"],
    "movie": ["film"],
    "film": ["movie", "picture"],
    "song": ["track", "tune"],
    "album": ["record", "release"],
    "team": ["side", "squad"],
    "city": ["town"],
    "river": ["stream", "waterway"],
    "mountain": ["peak"],
    "king": ["monarch", "ruler"],
    "war": ["conflict"],
    "battle": ["fight", "clash"],
    "theory": ["idea", "model"],
    "experiment": ["trial", "study"],
    "recorded": ["taped", "cut"],
    "released": ["issued", "put out"],
    "played": ["performed", "portrayed"],
    "capital": ["main city"],
    "ruled": ["governed", "reigned over"],
    "located": ["situated", "found"],
    "year": ["date"],
    "name": ["title"],
    "called": ["named", "known as"],
    "built": ["constructed", "erected"],
    "invented": ["devised", "created"],
    "scored": ["netted"],
    "composed": ["wrote", "created"],
    "starred": ["appeared", "featured"],
}


def make_name(rng, used):
    while True:
        parts = [rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(rng.choice([2, 2, 3]))]
        name = "".join(parts) + rng.choice(CODAS)
        if 5 <= len(name) <= 11 and name not in used:
            used.add(name)
            return name


def sentence(rng, t, ent, other, place, year):
    noun = rng.choice(t["nouns"])
    noun2 = rng.choice(t["nouns"])
    verb = rng.choice(t["verbs"])
    role = rng.choice(t["roles"])
    adj = rng.choice(ADJECTIVES)
    forms = [
        f"{ent} {verb} the {adj} {noun} of {other} in {year}.",
        f"The {noun} was {verb} by {ent}, a {role} from {place}.",
        f"In {year}, {ent} {verb} a {noun} near {place}.",
        f"{ent} is a {adj} {role} known for the {noun} and the {noun2}.",
        f"Historians note that {ent} {verb} the {noun} after the {noun2} of {other}.",
        f"The {adj} {noun} in {place} is associated with {ent} and {other}.",
        f"{ent} later {verb} the {noun2} with {other}, which made {ent} a {adj} {role}.",
        f"According to records, the {noun} of {place} was first {verb} in {year}.",
    ]
    return rng.choice(forms)


def question(rng, t, ent, other, place, year):
    noun = rng.choice(t["nouns"])
    verb = rng.choice(t["verbs"])
    role = rng.choice(t["roles"])
    adj = rng.choice(ADJECTIVES)
    forms = [
        f"who {verb} the {noun} of {other}",
        f"when did {ent} become a {role}",
        f"what {noun} was {verb} by {ent}",
        f"where is the {adj} {noun} of {place}",
        f"which {role} {verb} the {noun} in {year}",
        f"who was {ent} and what {noun} is {ent} known for",
        f"in what year was the {noun} {verb} by {ent}",
        f"what is the {adj} {noun} associated with {ent} and {other}",
        f"how did {ent} become the {adj} {role} of {place}",
        f"who is the {role} that {verb} the {noun}",
    ]
    return rng.choice(forms)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "toy"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--docs", type=int, default=2000)
    ap.add_argument("--queries", type=int, default=300)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    used = set()
    world = {}
    for name, t in TOPICS.items():
        world[name] = {
            "entities": [make_name(rng, used) for _ in range(40)],
            "places": [make_name(rng, used) for _ in range(12)],
        }

    topic_names = list(TOPICS)
    docs = []
    for i in range(args.docs):
        tname = topic_names[i % len(topic_names)]
        t, w = TOPICS[tname], world[tname]
        ent = rng.choice(w["entities"])
        sents = []
        for _ in range(rng.randint(3, 6)):
            other = rng.choice(w["entities"])
            place = rng.choice(w["places"])
            year = str(rng.randint(1500, 2020))
            sents.append(sentence(rng, t, ent.capitalize(), other.capitalize(), place.capitalize(), year))
        docs.append({"id": f"doc{i:05d}", "text": " ".join(sents)})
    rng.shuffle(docs)

    queries = []
    topics = []
    per_topic = args.queries // len(topic_names)
    for ti, tname in enumerate(topic_names):
        t, w = TOPICS[tname], world[tname]
        for j in range(per_topic):
            ent = rng.choice(w["entities"])
            other = rng.choice(w["entities"])
            place = rng.choice(w["places"])
            year = str(rng.randint(1500, 2020))
            qid = f"q{ti}{j:03d}"
            queries.append({"qid": qid, "text": question(rng, t, ent, other, place, year)})
            topics.append({"qid": qid, "topic": ti})
    order = list(range(len(queries)))
    rng.shuffle(order)
    queries = [queries[i] for i in order]
    topics = [topics[i] for i in order]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def dump(name, rows):
        with open(out / name, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")

    dump("corpus.jsonl", docs)
    dump("queries.jsonl", queries)
    dump("topics.jsonl", topics)
    dump("synonyms.jsonl", [{"word": k, "synonyms": v} for k, v in sorted(SYNONYMS.items())])


if __name__ == "__main__":
    main()
