"""Command line entry point.

Exit codes: 0 success / Accepted, 1 verification Rejected, 2 usage error,
3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from . import lmu_format
from .errors import BadConfig, ParseError
from .porting import PortingInputs, verify_and_decrypt
from .records import record_json_line
from .secmod import SvdCredential
from .simnet import ScenarioConfig, build_sim

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2
EXIT_IO = 3


class _Fail(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None


def _load_credential(path: str) -> SvdCredential:
    try:
        return SvdCredential.from_bytes(_read(path))
    except ParseError as exc:
        raise _Fail(EXIT_IO, f"{path}: {exc}") from None


def _emit(args: argparse.Namespace, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _porting_inputs(args: argparse.Namespace) -> PortingInputs:
    image = _read(args.image)
    cred = _load_credential(args.svd)
    master = None
    if args.master is not None:
        try:
            master = bytes.fromhex(args.master)
        except ValueError:
            raise _Fail(EXIT_USAGE, "--master must be hex") from None
        if len(master) != 32:
            raise _Fail(EXIT_USAGE, "--master must be 32 bytes")
    return PortingInputs(image=image, credential=cred, platform_master=master)


def _rng(args: argparse.Namespace) -> random.Random:
    return random.SystemRandom() if args.challenge_seed is None else random.Random(args.challenge_seed)


# -- commands -----------------------------------------------------------------

def cmd_sim_run(args: argparse.Namespace) -> int:
    try:
        config = ScenarioConfig.from_json(_read(args.config).decode("utf-8"))
        sim = build_sim(config, args.seed)
    except (BadConfig, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_IO, f"{args.config}: {exc}") from None
    result = sim.run()
    try:
        written = result.write(args.out)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write to {args.out}: {exc.strerror}") from None
    summary = {
        "ticks": result.ticks,
        "ecs": [
            {"address": a, "ec_id": result.ec_ids[a].hex(), "records": len(result.oracle[a])}
            for a in sorted(result.images)
        ],
        "files": [str(p) for p in written],
    }
    lines = [f"ran {result.ticks} ticks, wrote {len(written)} files to {args.out}"]
    lines += [f"  ec{e['address']:02d} {e['ec_id']} records={e['records']}" for e in summary["ecs"]]
    _emit(args, summary, "\n".join(lines))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        image = lmu_format.parse_image(_read(args.image))
    except ParseError as exc:
        raise _Fail(EXIT_IO, f"{args.image}: {type(exc).__name__}: {exc}") from None
    h, integ = image.header, image.integrity
    info = {
        "version": h.version,
        "lmu_id": h.lmu_id.hex(),
        "ec_id": h.ec_id.hex(),
        "med_id": h.med_id.hex(),
        "svd_id": h.svd_id.hex(),
        "created_at": h.created_at,
        "capacity_blocks": h.capacity_blocks,
        "record_payload_max": h.record_payload_max,
        "block_count": integ.block_count,
        "update_counter": integ.update_counter,
        "chain_tag": integ.chain_tag.hex(),
        "size_bytes": h.image_size,
    }
    _emit(args, info, "\n".join(f"{k:<20}{v}" for k, v in info.items()))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    report, _ = verify_and_decrypt(_porting_inputs(args), _rng(args))
    if args.report:
        try:
            Path(args.report).write_text(report.to_json() + "\n")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write {args.report}: {exc.strerror}") from None
    text = report.verdict.value
    if not report.accepted:
        text += f" ({report.reject_reason.value}): {report.detail}"
    else:
        text += f": {report.blocks_checked} blocks checked"
    _emit(args, report.to_dict(), text)
    return EXIT_OK if report.accepted else EXIT_REJECTED


def cmd_tamper(args: argparse.Namespace) -> int:
    path = Path(args.image)
    data = bytearray(_read(args.image))
    if args.offset is not None:
        offset = args.offset
    else:
        if args.block is None or args.byte is None:
            raise _Fail(EXIT_USAGE, "give --offset, or both --block and --byte")
        try:
            header = lmu_format.parse_header(bytes(data))
        except ParseError as exc:
            raise _Fail(EXIT_IO, f"{args.image}: {exc}") from None
        if not 0 <= args.block < header.capacity_blocks or not 0 <= args.byte < header.slot_size:
            raise _Fail(EXIT_USAGE, "block/byte outside the image slots")
        offset = lmu_format.block_offset(header, args.block) + args.byte
    if not 0 <= offset < len(data):
        raise _Fail(EXIT_USAGE, f"offset {offset} outside file of {len(data)} bytes")
    data[offset] ^= 0xFF
    try:
        path.write_bytes(bytes(data))
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {path}: {exc.strerror}") from None
    _emit(args, {"offset": offset, "new_value": data[offset]}, f"flipped byte at offset {offset}")
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    inputs = _porting_inputs(args)
    report, records = verify_and_decrypt(inputs, _rng(args))
    if not report.accepted:
        _emit(args, report.to_dict(), f"export refused: {report.reject_reason.value}")
        return EXIT_REJECTED
    ec_id = lmu_format.parse_header(inputs.image).ec_id
    out = Path(args.out)
    body = "".join(record_json_line(r, ec_id=ec_id, seq=i) + "\n" for i, r in enumerate(records))
    # write-then-rename so a failure never leaves a partial file behind
    try:
        fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=".export-")
        with os.fdopen(fd, "w") as fh:
            fh.write(body)
        os.replace(tmp, out)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {out}: {exc.strerror}") from None
    _emit(args, {"records": len(records), "out": str(out)}, f"exported {len(records)} records to {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seclog", description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    # --json is also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="simulation commands")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    sim_run = sim_sub.add_parser("run", parents=[common], help="run a scenario and write images")
    sim_run.add_argument("--config", required=True)
    sim_run.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    sim_run.add_argument("--out", required=True)
    sim_run.set_defaults(func=cmd_sim_run)

    inspect = sub.add_parser("inspect", parents=[common], help="dump header and integrity fields")
    inspect.add_argument("image")
    inspect.set_defaults(func=cmd_inspect)

    def porting_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--image", required=True)
        p.add_argument("--svd", required=True)
        p.add_argument("--master", default=None,
                       help="hex master secret provisioned on the new platform (default: from --svd)")
        p.add_argument("--challenge-seed", type=int, default=None,
                       help="seed the challenge generator (reproducible transcripts)")

    verify = sub.add_parser("verify", parents=[common], help="run the porting verification")
    porting_args(verify)
    verify.add_argument("--report", default=None)
    verify.set_defaults(func=cmd_verify)

    tamper = sub.add_parser("tamper", parents=[common], help="flip one byte in place (XOR 0xFF)")
    tamper.add_argument("--image", required=True)
    tamper.add_argument("--offset", type=int, default=None)
    tamper.add_argument("--block", type=int, default=None)
    tamper.add_argument("--byte", type=int, default=None)
    tamper.set_defaults(func=cmd_tamper)

    export = sub.add_parser("export", parents=[common], help="verify, then write records as JSON lines")
    porting_args(export)
    export.add_argument("--out", required=True)
    export.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"seclog: error: {exc}", file=sys.stderr)
        if exc.code == EXIT_USAGE:
            parser.print_usage(sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
