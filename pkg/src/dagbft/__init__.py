"""DAG-based Byzantine atomic broadcast with round-robin anchors."""

from .dag import DagView, Reason, rr
from .engine import Engine, EngineOutput, advance_target
from .ordering import CommitEvent, DeliveredSet, commit, delivery
from .simnet import AdversaryPlan, Behavior, NetworkModel, RunTrace, Simulator, StopCondition, run
from .types import (Block, BlockMessage, Config, Ed25519Signer, SimulatedSigner, decode_block,
                    decode_message, encode_block, encode_message, make_block)

__all__ = [
    "AdversaryPlan", "Behavior", "Block", "BlockMessage", "CommitEvent", "Config", "DagView",
    "DeliveredSet", "Ed25519Signer", "Engine", "EngineOutput", "NetworkModel", "Reason", "RunTrace",
    "SimulatedSigner", "Simulator", "StopCondition", "advance_target", "commit", "decode_block",
    "decode_message", "delivery", "encode_block", "encode_message", "make_block", "rr", "run",
]
