"""dltbench: deterministic DLT network simulator and benchmark harness."""

from .ledger import (
    Block,
    ContentStore,
    Dag,
    DagVertex,
    Transaction,
    TxKind,
    WireSizeModel,
    hash_block,
    make_block,
    make_transaction,
    store_blob,
    verify_chain,
    wire_size,
)
from .consensus import (
    EndorseOrderValidateEngine,
    PohEngine,
    PowEngine,
    QuorumConfig,
    TangleEngine,
    VotingEngine,
    WorkLedger,
    poh_extend,
    pow_seal,
    tangle_select_tips,
    voting_round,
)
from .channels import ChannelState, close_channel, on_chain_tx_count, open_channel, update
from .marketplace import Machine, Marketplace, RentalAgreement, RentalRequest
from .metrics import CarbonParams, MetricsReport, energy_for_operation, ghg_emission
from .netsim import Scenario, Simulation, run_scenario, sweep_managers
from .profiles import PlatformProfile, load_profile

__version__ = "0.1.0"
