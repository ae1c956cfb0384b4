import argparse
import json
import logging
import os
import sys

from adcue.embedding_store import ManifestError

from . import bridge
from .models import ExtractorConfig, ModelLoadError
from .tokenizer import TokenLimitError


def build_parser():
    parser = argparse.ArgumentParser(prog="adex")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="dump encoder hidden states")
    p.add_argument("--manifest", help="input manifest (audio/text modality)")
    p.add_argument("--modality", required=True,
                   choices=["audio", "text", "keywords"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--keywords", help="file with one keyword per line")
    p.add_argument("--weights-dir",
                   help="directory with <model>.npz weight files; "
                        "deterministic random init when omitted")
    p.add_argument("--exclude-embedding-layer", action="store_true",
                   help="drop the pre-transformer embedding layer (layer 0)")
    p.add_argument("--audio-model", default="whisper-small")
    p.add_argument("--text-model", default="bert-base-uncased")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ADEX_LOG", "warning").upper())
    args = build_parser().parse_args(argv)
    cfg = ExtractorConfig(
        audio_model=args.audio_model,
        text_model=args.text_model,
        include_embedding_layer=not args.exclude_embedding_layer,
        weights_dir=args.weights_dir,
    )
    keywords = None
    if args.keywords:
        keywords = [w.strip() for w in open(args.keywords) if w.strip()]
    if args.modality != "keywords" and not args.manifest:
        print(json.dumps({"error": "usage",
                          "message": "--manifest is required"}),
              file=sys.stderr)
        return 2
    try:
        out = bridge.run(args.manifest, args.modality, args.out_dir, cfg,
                         keywords)
    except ManifestError as e:
        print(json.dumps({"error": "manifest", "message": str(e)}),
              file=sys.stderr)
        return 3
    except (ModelLoadError, TokenLimitError, ValueError, OSError) as e:
        print(json.dumps({"error": "data", "message": str(e)}),
              file=sys.stderr)
        return 3
    print(json.dumps({"manifest": str(out)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
