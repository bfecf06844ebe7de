#!/usr/bin/env python3
"""Export frozen sentence embeddings for the pretrained encoder kinds.

Reads an interchange file (one JSON record per line), runs every distinct
text through a Hugging Face encoder and writes one {"text", "embedding"}
line per text. Point EncoderConfig.weights_path at the output.
"""

import argparse
import json
import sys

import torch
from transformers import AutoModel, AutoTokenizer

DEFAULT_MODELS = {
    "PRETRAINED_SMALL_BERT": "google/bert_uncased_L-2_H-128_A-2",
    "PRETRAINED_SMALL_ELECTRA": "google/electra-small-discriminator",
    "PRETRAINED_BASE_ALBERT": "albert-base-v2",
}


def read_texts(path):
    seen = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                seen.setdefault(json.loads(line)["text"], None)
    return list(seen)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True, help="records.jsonl")
    ap.add_argument("--out", required=True, help="output JSONL")
    ap.add_argument("--kind", choices=sorted(DEFAULT_MODELS), default="PRETRAINED_SMALL_BERT")
    ap.add_argument("--model", help="Hugging Face model id (overrides --kind)")
    ap.add_argument("--max-length", type=int, default=128)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--pooling", choices=["cls", "mean"], default="cls")
    args = ap.parse_args()

    name = args.model or DEFAULT_MODELS[args.kind]
    tokenizer = AutoTokenizer.from_pretrained(name)
    model = AutoModel.from_pretrained(name).eval()
    texts = read_texts(args.data)

    with open(args.out, "w", encoding="utf-8") as out, torch.no_grad():
        for start in range(0, len(texts), args.batch_size):
            chunk = texts[start:start + args.batch_size]
            enc = tokenizer(chunk, padding=True, truncation=True, max_length=args.max_length,
                            return_tensors="pt")
            hidden = model(**enc).last_hidden_state
            if args.pooling == "cls":
                pooled = hidden[:, 0]
            else:
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(1) / mask.sum(1)
            for text, vec in zip(chunk, pooled.tolist()):
                out.write(json.dumps({"text": text, "embedding": vec}) + "\n")
    print(f"{len(texts)} texts, width {model.config.hidden_size}, model {name}", file=sys.stderr)


if __name__ == "__main__":
    main()
