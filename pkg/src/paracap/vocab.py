"""Token vocabulary with the three special tokens used everywhere."""

from __future__ import annotations

import json

from .errors import ContractViolation

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"


class Vocabulary:
    """Dense token<->id map; ids 0..2 are <pad>, <bos>, <eos>."""

    def __init__(self, words):
        self.tokens = [PAD, BOS, EOS] + list(words)
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractViolation("vocabulary contains duplicate tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id, self.bos_id, self.eos_id = 0, 1, 2

    def __len__(self):
        return len(self.tokens)

    def encode(self, words):
        try:
            return [self.index[w] for w in words]
        except KeyError as exc:
            raise ContractViolation(f"unknown token {exc.args[0]!r}") from None

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"tokens": self.tokens}, fh, indent=0, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        tokens = payload["tokens"]
        if tokens[:3] != [PAD, BOS, EOS]:
            raise ContractViolation("vocabulary file missing special tokens")
        return cls(tokens[3:])
