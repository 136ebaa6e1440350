"""Record the UI contract fixture by driving the real pipeline.

Runs a paused session through refine and approve against the fake simulator,
then dumps the full event journal, the final report, and the status at each
gate into tests/fixtures/session.json. The fixture server replays this file;
rerun the script whenever the event or report schema changes:

    python3 scripts/record-fixture.py
"""

import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from simforge.gateway import load_scripted_provider
from simforge.orchestrator import build_report, run_pipeline
from simforge.toolchain import fake_toolchain

REQUIREMENTS = (
    "Simulate a 5G New Radio environment with 100 UEs and one gNB at 28 GHz "
    "with 200 MHz bandwidth. Implement TCP communication and enable traffic "
    "steering using beamforming"
)

FEEDBACK_TEXT = "Raise the application load: double the BulkSend rate and confirm QoS still holds."

EXTRACT_REPLY = """\
The scenario pins carrier, bandwidth, UE count, transport, and beamforming.

```params
carrier_frequency_ghz: 28
bandwidth_mhz: 200
num_ues: 100
num_gnbs: 1
transport_protocol: TCP
beamforming_enabled: true
```
"""

SCRIPT_V1 = """\
#include "ns3/core-module.h"
#include "ns3/internet-module.h"
#include "ns3/nr-module.h"
#include "ns3/flow-monitor-module.h"

using namespace ns3;

int main(int argc, char *argv[]) {
  CommandLine cmd;
  uint32_t numUes = 100;
  double simTime = 10.0;
  cmd.AddValue("numUes", "number of UEs", numUes);
  cmd.AddValue("simTime", "simulation length in seconds", simTime);
  cmd.Parse(argc, argv);

  NodeContainer ueNodes;
  ueNodes.Create(numUes);
  NodeContainer gnbNodes;
  gnbNodes.Create(1);

  NetDeviceContainer ueDevs = nrHelper->InstallUeDevice(ueNodes, allBwps);

  ApplicationContainer apps;
  BulkSendHelper bulk("ns3::TcpSocketFactory", sinkAddress);
  bulk.SetAttribute("SendSize", UintegerValue(512));
  apps = bulk.Install(ueNodes.Get(0));
  apps.Start(Seconds(0.5));

  FlowMonitorHelper flowHelper;
  Ptr<FlowMonitor> monitor = flowHelper.InstallAll();

  Simulator::Stop(Seconds(simTime));
  Simulator::Run();
  monitor->SerializeToXmlFile("flowmon.xml", true, true);
  Simulator::Destroy();
  return 0;
}
"""

SCRIPT_V2 = SCRIPT_V1.replace(
    'bulk.SetAttribute("SendSize", UintegerValue(512));',
    'bulk.SetAttribute("SendSize", UintegerValue(1024));\n'
    "  // operator request: doubled send size to stress QoS headroom",
)

GENERATE_V1 = f"""\
Stage 1: 100 UEs, one gNB at 28 GHz with 200 MHz bandwidth, TCP, beamforming.

Stage 2: NrHelper drives the NR stack, BulkSendHelper generates the TCP load,
FlowMonitor records per-flow statistics.

Stage 3:

```cpp
{SCRIPT_V1}```
"""

GENERATE_V2 = f"""\
Stage 1: parameters unchanged; the operator asked for a heavier send profile.

Stage 2: same module choices with the BulkSend size doubled.

Stage 3:

```cpp
{SCRIPT_V2}```
"""

DESIGN_REPLY = """\
The mandatory suite already covers attachment, data flow, QoS, stress, and
scaling. One addition bounds the jitter.

```cases
[{"case_id": "jitter-bound", "kind": "edge",
  "description": "mean jitter stays under 30 ms",
  "check": {"field": "kpis.mean_jitter_s", "op": "le", "value": 0.03},
  "overrides": {}}]
```
"""

INTERPRET_V1 = """\
```interpretation
{"summary": "All checks passed on the first run; throughput holds near 10 Mbit/s with 20 ms mean delay and 0.2% loss.",
 "verdict": "meets_criteria",
 "findings": []}
```
"""

INTERPRET_V2 = """\
```interpretation
{"summary": "The doubled send profile still meets every check; delay and loss are unchanged within noise.",
 "verdict": "meets_criteria",
 "findings": []}
```
"""

PAIRS = [
    ("extract", EXTRACT_REPLY),
    ("generate-1", GENERATE_V1),
    ("design", DESIGN_REPLY),
    ("interpret-1", INTERPRET_V1),
    ("generate-2", GENERATE_V2),
    ("interpret-2", INTERPRET_V2),
]


def main() -> None:
    out_path = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "session.json"
    with tempfile.TemporaryDirectory() as td:
        provider = load_scripted_provider(PAIRS)
        orch, state = run_pipeline(
            REQUIREMENTS,
            provider,
            store_root=Path(td),
            toolchain=fake_toolchain(),
            pause_for_human=True,
            session_id="ui-fixture",
        )
        statuses = {"after_requirements": state.status}
        state = orch.apply_feedback(state.session_id, text=FEEDBACK_TEXT)
        statuses["after_refine"] = state.status
        state = orch.apply_feedback(state.session_id, approve=True)
        statuses["after_approve"] = state.status

        events = [ev.to_dict() for ev in orch.store.read_events(state.session_id)]
        fixture = {
            "format_version": 1,
            "requirements": REQUIREMENTS,
            "statuses": statuses,
            "events": events,
            "report": build_report(state),
        }
    out_path.write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    kinds = sorted({e["kind"] for e in events})
    print(f"wrote {out_path} ({len(events)} events, kinds: {', '.join(kinds)})")


if __name__ == "__main__":
    main()
