#!/usr/bin/env python3
"""JSON-lines bridge exposing a Hugging Face CLIP model to the C++ backbone.

Reads one request per line on stdin and writes one response per line on
stdout. Ops: info, encode_image, encode_text, text_vjp, tokenize,
token_embedding. Pseudo-word labels are added to the tokenizer as single
tokens; their input embeddings are overwritten with the injected vectors.

    clip_bridge.py --model openai/clip-vit-base-patch32
    clip_bridge.py --random-init   # tiny untrained model for tests
"""

import argparse
import hashlib
import json
import re
import sys

import torch
from transformers import CLIPConfig, CLIPModel, CLIPTokenizer

PSEUDO_WORD = re.compile(r"<\|pw\d+\|>")


class BridgeError(Exception):
    def __init__(self, message, kind="input_error"):
        super().__init__(message)
        self.kind = kind


def char_vocab():
    """Byte-level vocabulary without merges, enough for an offline CLIPTokenizer."""
    printable = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    chars = [chr(b) for b in printable] + [chr(256 + n) for n in range(256 - len(printable))]
    vocab = chars + [c + "</w>" for c in chars] + ["<|startoftext|>", "<|endoftext|>"]
    return {tok: i for i, tok in enumerate(vocab)}


class Bridge:
    def __init__(self, args):
        torch.manual_seed(args.seed)
        self.dtype = torch.float64 if args.dtype == "float64" else torch.float32
        if args.random_init:
            self.tokenizer = CLIPTokenizer(vocab=char_vocab(), merges=[])
            config = CLIPConfig(
                text_config=dict(vocab_size=len(self.tokenizer), hidden_size=32, intermediate_size=64,
                                 num_hidden_layers=2, num_attention_heads=2, max_position_embeddings=77,
                                 eos_token_id=self.tokenizer.eos_token_id, bos_token_id=self.tokenizer.bos_token_id),
                vision_config=dict(hidden_size=32, intermediate_size=64, num_hidden_layers=2, num_attention_heads=2,
                                   image_size=args.image_size, patch_size=8),
                projection_dim=24,
            )
            self.model = CLIPModel(config)
            self.model_id = "random-init"
        else:
            self.tokenizer = CLIPTokenizer.from_pretrained(args.model)
            self.model = CLIPModel.from_pretrained(args.model)
            self.model_id = args.model
        self.model = self.model.to(self.dtype).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.image_size = self.model.config.vision_config.image_size
        self.context_length = self.model.config.text_config.max_position_embeddings
        self.token_table = self.model.text_model.embeddings.token_embedding
        self.pseudo_ids = {}
        self.pending = None
        self.token_table.register_forward_hook(self._inject)

    def _inject(self, module, inputs, output):
        if not self.pending:
            return output
        output = output.clone()
        for position, vector in self.pending:
            output[0, position] = vector
        return output

    def _ids(self, prompt):
        for label in PSEUDO_WORD.findall(prompt):
            if label not in self.pseudo_ids:
                self.tokenizer.add_tokens([label], special_tokens=True)
                self.pseudo_ids[label] = self.tokenizer.convert_tokens_to_ids(label)
        return self.tokenizer(prompt)["input_ids"]

    def info(self, _):
        digest = hashlib.sha256()
        for name, tensor in sorted(self.model.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.to(torch.float32).numpy().tobytes())
        return {
            "embed_dim": self.model.config.projection_dim,
            "token_dim": self.token_table.embedding_dim,
            "context_length": self.context_length,
            "model_id": self.model_id,
            "token_embedding_std": float(self.token_table.weight.std()),
            "parameter_digest": int.from_bytes(digest.digest()[:8], "little") >> 1,
        }

    def encode_image(self, req):
        size = req["size"]
        pixels = torch.tensor(req["pixels"], dtype=self.dtype).reshape(1, 3, size, size)
        if size != self.image_size:
            pixels = torch.nn.functional.interpolate(pixels, size=(self.image_size, self.image_size),
                                                     mode="bicubic", align_corners=False)
        with torch.no_grad():
            features = self._pooled(self.model.get_image_features(pixel_values=pixels))
        return {"features": features[0].tolist()}

    @staticmethod
    def _pooled(out):
        return out if isinstance(out, torch.Tensor) else out.pooler_output

    def _text(self, req, with_grad):
        prompt = req["prompt"]
        ids = self._ids(prompt)
        if len(ids) > self.context_length:
            raise BridgeError(f"prompt needs {len(ids)} tokens, context holds {self.context_length}", "truncation_error")
        injections = req.get("injections", {})
        leaves = {}
        pending = []
        label_of = {v: k for k, v in self.pseudo_ids.items()}
        for position, token_id in enumerate(ids):
            if token_id in label_of:
                label = label_of[token_id]
                if label not in injections:
                    raise BridgeError(f"prompt uses {label} without an injected token")
                if label not in leaves:
                    leaves[label] = torch.tensor(injections[label], dtype=self.dtype, requires_grad=with_grad)
                pending.append((position, leaves[label]))
                ids[position] = 0
        self.pending = pending
        try:
            with torch.set_grad_enabled(with_grad):
                features = self._pooled(self.model.get_text_features(input_ids=torch.tensor([ids])))[0]
        finally:
            self.pending = None
        return features, leaves

    def encode_text(self, req):
        features, _ = self._text(req, with_grad=False)
        return {"features": features.tolist()}

    def text_vjp(self, req):
        features, leaves = self._text(req, with_grad=True)
        if not leaves:
            return {"grads": {}}
        grad = torch.tensor(req["grad_features"], dtype=self.dtype)
        labels = list(leaves)
        grads = torch.autograd.grad(features, [leaves[l] for l in labels], grad_outputs=grad, allow_unused=True)
        return {"grads": {l: (g if g is not None else torch.zeros_like(leaves[l])).tolist() for l, g in zip(labels, grads)}}

    def tokenize(self, req):
        return {"tokens": self.tokenizer.convert_ids_to_tokens(self._ids(req["prompt"]))}

    def token_embedding(self, req):
        ids = self.tokenizer(req["word"], add_special_tokens=False)["input_ids"]
        if len(ids) != 1:
            raise BridgeError(f"'{req['word']}' is {len(ids)} tokens, expected one")
        return {"values": self.token_table.weight[ids[0]].tolist()}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default="openai/clip-vit-base-patch32")
    parser.add_argument("--random-init", action="store_true")
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    bridge = Bridge(args)
    ops = {name: getattr(bridge, name)
           for name in ("info", "encode_image", "encode_text", "text_vjp", "tokenize", "token_embedding")}
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = ops.get(req.get("op"))
            if op is None:
                raise BridgeError(f"unknown op {req.get('op')!r}")
            reply = op(req)
        except BridgeError as e:
            reply = {"error": str(e), "kind": e.kind}
        except (KeyError, ValueError, TypeError) as e:
            reply = {"error": f"bad request: {e}", "kind": "input_error"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
