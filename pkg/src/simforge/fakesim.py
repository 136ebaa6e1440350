"""Stand-in for an installed ns-3 build, driven by markers inside the payload.

Runs as a plain subprocess (``python -m simforge.fakesim ...``) so the
toolchain exercises exactly the staging, capture, and artifact-collection
code paths it uses against a real simulator. Deliberately stdlib-only and
import-light to keep process startup cheap.

Payload markers (anywhere in the staged payload text):
    FAKESIM:COMPILE_ERROR <msg>   compile step fails with <msg> on stderr
    FAKESIM:CRASH                 run prints a segfault line, exit 139
    FAKESIM:ASSERT                run prints an ns-3 assert line, exit 134
    FAKESIM:HANG=<seconds>        run sleeps that long and writes nothing
    FAKESIM:SLEEP=<seconds>       override the engine sleep for this payload
    FAKESIM:FLOOD=<bytes>         run prints roughly that many bytes to stdout
    FAKESIM:ORPHAN=<pidfile>      run double-forks a 30 s sleeper, records its pid
    FAKESIM:FLOWMON k=v ...       override the emitted FlowMonitor stats
"""

import argparse
import os
import re
import sys
import time

DEFAULT_FLOW = {
    "flow_id": 1,
    "tx": 1000,
    "rx": 998,
    "rx_bytes": 1250000,
    "tx_bytes": 1252500,
    "delay_sum_s": 19.96,
    "jitter_sum_s": 9.97,
    "first_tx_s": 0.0,
    "last_rx_s": 1.0,
}


def _flow_xml(f):
    def ns(v):
        return "+{:.1f}ns".format(v * 1e9)

    return (
        '    <Flow flowId="{flow_id}" txPackets="{tx}" rxPackets="{rx}" '
        'lostPackets="{lost}" txBytes="{tx_bytes}" rxBytes="{rx_bytes}" '
        'delaySum="{delay}" jitterSum="{jitter}" '
        'timeFirstTxPacket="{first}" timeLastRxPacket="{last}" />'
    ).format(
        flow_id=f["flow_id"],
        tx=f["tx"],
        rx=f["rx"],
        lost=f["tx"] - f["rx"],
        tx_bytes=f["tx_bytes"],
        rx_bytes=f["rx_bytes"],
        delay=ns(f["delay_sum_s"]),
        jitter=ns(f["jitter_sum_s"]),
        first=ns(f["first_tx_s"]),
        last=ns(f["last_rx_s"]),
    )


def _parse_flow_marker(line):
    flow = dict(DEFAULT_FLOW)
    for token in line.split()[1:]:
        if "=" not in token:
            continue
        key, value = token.split("=", 1)
        if key in ("flow_id", "tx", "rx", "rx_bytes", "tx_bytes"):
            flow[key] = int(value)
        elif key in ("delay_sum_s", "jitter_sum_s", "first_tx_s", "last_rx_s"):
            flow[key] = float(value)
    return flow


def cmd_compile(args):
    text = open(args.entry, encoding="utf-8", errors="replace").read()
    m = re.search(r"FAKESIM:COMPILE_ERROR ?(.*)", text)
    if m:
        msg = m.group(1).strip() or "error: expected ';' before '}' token"
        sys.stderr.write("payload.cc:42:1: {}\n".format(msg))
        return 1
    sys.stdout.write("fakesim: compiled {}\n".format(os.path.basename(args.entry)))
    return 0


def cmd_run(args, extra):
    text = open(args.entry, encoding="utf-8", errors="replace").read()

    m = re.search(r"FAKESIM:HANG=([\d.]+)", text)
    if m:
        time.sleep(float(m.group(1)))
        return 0

    if "FAKESIM:CRASH" in text:
        sys.stderr.write("Segmentation fault (core dumped)\n")
        return 139
    if "FAKESIM:ASSERT" in text:
        sys.stderr.write(
            'NS_ASSERT failed, cond="m_ueCount > 0", +0.000000000s file=payload.cc line=57\n'
        )
        sys.stderr.write("Aborted (core dumped)\n")
        return 134

    m = re.search(r"FAKESIM:FLOOD=(\d+)", text)
    if m:
        budget = int(m.group(1))
        line = "x" * 120 + "\n"
        written = 0
        while written < budget:
            sys.stdout.write(line)
            written += len(line)
        return 0

    m = re.search(r"FAKESIM:ORPHAN=(\S+)", text)
    if m:
        pidfile = m.group(1)
        pid = os.fork()
        if pid == 0:  # detached sleeper; the toolchain must reap it
            os.setsid()
            with open(pidfile, "w") as fh:
                fh.write(str(os.getpid()))
            time.sleep(30)
            os._exit(0)

    sleep_s = args.sleep
    m = re.search(r"FAKESIM:SLEEP=([\d.]+)", text)
    if m:
        sleep_s = float(m.group(1))

    start = time.perf_counter()
    if sleep_s > 0:
        time.sleep(sleep_s)
    engine_time = time.perf_counter() - start

    flows = [_parse_flow_marker(line) for line in text.splitlines() if "FAKESIM:FLOWMON" in line]
    if not flows:
        flows = [dict(DEFAULT_FLOW)]
    xml = (
        '<?xml version="1.0" ?>\n<FlowMonitor>\n  <FlowStats>\n'
        + "\n".join(_flow_xml(f) for f in flows)
        + "\n  </FlowStats>\n</FlowMonitor>\n"
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(xml)

    if extra:
        sys.stdout.write("fakesim: args {}\n".format(" ".join(extra)))
    sys.stdout.write("fakesim: wrote {}\n".format(os.path.basename(args.out)))
    sys.stdout.write("fakesim: base-time-s={:.6f}\n".format(engine_time))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fakesim")
    sub = parser.add_subparsers(dest="command", required=True)
    p_compile = sub.add_parser("compile")
    p_compile.add_argument("entry")
    p_run = sub.add_parser("run")
    p_run.add_argument("entry")
    p_run.add_argument("--sleep", type=float, default=0.0)
    p_run.add_argument("--out", default="flowmon.xml")
    args, extra = parser.parse_known_args(argv)
    if args.command == "compile":
        return cmd_compile(args)
    return cmd_run(args, extra)


if __name__ == "__main__":
    sys.exit(main())
