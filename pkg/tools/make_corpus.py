"""Regenerate src/gradleak/data/toy_corpus.tsv (label TAB text, one per line)."""
import random
from pathlib import Path

NOUNS = ["movie", "film", "story", "plot", "acting", "cast", "script", "ending", "music",
         "director", "scene", "dialogue", "show", "soundtrack", "hero", "villain", "comedy",
         "drama", "sequel", "premise", "pacing", "humor", "performance", "cinematography"]
POS = ["good", "great", "wonderful", "lovely", "brilliant", "funny", "charming", "beautiful",
       "moving", "clever", "fresh", "warm", "smart", "gripping", "delightful", "superb"]
NEG = ["bad", "boring", "dull", "awful", "terrible", "weak", "silly", "slow", "messy",
       "bland", "flat", "tired", "clumsy", "shallow", "painful", "forgettable"]
ADV = ["very", "really", "truly", "quite", "so", "rather", "incredibly", "surprisingly"]
POS_V = ["loved", "enjoyed", "liked", "adored", "admired", "recommend"]
NEG_V = ["hated", "disliked", "regretted", "endured", "resented"]
WHO = ["i", "we", "my friends", "everyone", "the critics", "my family", "nobody"]

TEMPLATES = [
    "{adj} {noun}",
    "{adj} {noun} .",
    "a {adj} {noun}",
    "{adv} {adj} .",
    "what a {adj} {noun} !",
    "the {noun} was {adj} .",
    "the {noun} is {adv} {adj} .",
    "{who} {verb} the {noun} .",
    "{who} {verb} this {noun} .",
    "the {noun} was {adv} {adj} and the {noun2} was {adj2} .",
    "it is a {adv} {adj} {noun} with a {adj2} {noun2} .",
    "{who} thought the {noun} was {adv} {adj} .",
    "this {noun} has a {adj} {noun2} .",
    "the {noun} and the {noun2} are {adj} .",
    "overall a {adj} {noun} with {adj2} {noun2} .",
    "honestly the {noun} felt {adj} .",
]


def sentence(rng, label):
    adjs, verbs = (POS, POS_V) if label else (NEG, NEG_V)
    noun, noun2 = rng.sample(NOUNS, 2)
    adj, adj2 = rng.sample(adjs, 2)
    t = rng.choice(TEMPLATES)
    return t.format(adj=adj, adj2=adj2, noun=noun, noun2=noun2, adv=rng.choice(ADV),
                    verb=rng.choice(verbs), who=rng.choice(WHO))


def main():
    rng = random.Random(7)
    seen, rows = set(), []
    while len(rows) < 220:
        label = len(rows) % 2
        s = sentence(rng, label)
        if s not in seen:
            seen.add(s)
            rows.append(f"{label}\t{s}")
    out = Path(__file__).resolve().parents[1] / "src" / "gradleak" / "data" / "toy_corpus.tsv"
    out.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} lines to {out}")


if __name__ == "__main__":
    main()
